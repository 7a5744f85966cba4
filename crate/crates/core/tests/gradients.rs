mod common;

use common::gradient_errors;

const TOLERANCE: f64 = 1e-4;
const NAMES: [&str; 6] = ["vae", "cross", "total", "tc/disc", "tc/z", "tc/z_tilde"];

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..20 {
        let errs = gradient_errors(seed, 1e-8);
        for (name, e) in NAMES.iter().zip(errs) {
            assert!(e <= TOLERANCE, "seed {seed}, {name}: relative error {e:e}");
        }
    }
}
