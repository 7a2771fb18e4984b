//! Every differentiable building block against central finite differences
//! in double precision, over a few randomized shapes each.

mod common;

use common::grad_cases::*;

const SEEDS: [u64; 3] = [1, 2, 3];

fn check(case: Case) {
    for seed in SEEDS {
        assert!(case(seed) <= common::REL_TOL);
    }
}

#[test]
fn gat_layer_output_and_attention() {
    check(gat_layer);
}

#[test]
fn lstm_cell_both_directions() {
    check(lstm_cell);
}

#[test]
fn stacked_bilstm() {
    check(bilstm);
}

#[test]
fn conv3d_strided_padded_and_pointwise() {
    check(conv3d);
}

#[test]
fn lateral_sum_of_pointwise_projection() {
    check(lateral_sum);
}

#[test]
fn teacher_with_laterals_end_to_end() {
    check(teacher);
}

#[test]
fn chain_heads_and_classification_loss() {
    check(chain_heads);
}

#[test]
fn cross_entropy_of_random_logits() {
    check(cross_entropy_case);
}

#[test]
fn cosine_similarity_matrix() {
    check(cosine);
}

#[test]
fn infonce_plain_and_symmetric() {
    check(infonce);
}

#[test]
fn soft_label_distillation() {
    check(soft_label);
}

#[test]
fn small_students_end_to_end() {
    check(students);
}
