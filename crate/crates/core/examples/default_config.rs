//! Prints the fully resolved default run configuration as TOML, a starting
//! point for `socialkd --config`.

use socialkd::config::RunConfig;

fn main() {
    let cfg = RunConfig::default();
    println!("# fingerprint {}", cfg.fingerprint());
    print!("{}", cfg.to_toml());
}
