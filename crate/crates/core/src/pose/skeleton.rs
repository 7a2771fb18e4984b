//! COCO-17 body layout, 68-point face layout and 2x21 hand layout.

pub const NOSE: usize = 0;
pub const LEFT_EYE: usize = 1;
pub const RIGHT_EYE: usize = 2;
pub const LEFT_EAR: usize = 3;
pub const RIGHT_EAR: usize = 4;
pub const LEFT_SHOULDER: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const LEFT_ELBOW: usize = 7;
pub const RIGHT_ELBOW: usize = 8;
pub const LEFT_WRIST: usize = 9;
pub const RIGHT_WRIST: usize = 10;
pub const LEFT_HIP: usize = 11;
pub const RIGHT_HIP: usize = 12;
pub const LEFT_KNEE: usize = 13;
pub const RIGHT_KNEE: usize = 14;
pub const LEFT_ANKLE: usize = 15;
pub const RIGHT_ANKLE: usize = 16;

pub const JOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Bone connections of the COCO skeleton.
pub const COCO_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

/// Index each body joint maps to under a horizontal flip.
pub const BODY_FLIP: [usize; 17] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15];

/// Mirror map of the 68-point face layout.
pub fn face_flip() -> [usize; 68] {
    let mut map = [0usize; 68];
    for (i, m) in map.iter_mut().enumerate() {
        *m = i;
    }
    let mut pair = |a: usize, b: usize| {
        map[a] = b;
        map[b] = a;
    };
    for i in 0..8 {
        pair(i, 16 - i); // jaw
    }
    for i in 0..5 {
        pair(17 + i, 26 - i); // brows
    }
    pair(31, 35);
    pair(32, 34);
    for (a, b) in [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)] {
        pair(a, b); // eyes
    }
    for (a, b) in [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58), (60, 64), (61, 63), (65, 67)] {
        pair(a, b); // mouth
    }
    map
}

/// Hands are stored left (0..21) then right (21..42); a flip swaps the blocks.
pub fn hand_flip() -> [usize; 42] {
    let mut map = [0usize; 42];
    for (i, m) in map.iter_mut().enumerate() {
        *m = if i < 21 { i + 21 } else { i - 21 };
    }
    map
}
