//! Finite-difference check of the whole network in f64: focus, stem, a
//! projected stride-2 block, pooling and both heads, with train-mode BN.

use vsp_core::gradcheck::{network, network_config};
use vsp_core::net::{HeadMode, NetworkConfig};

#[test]
fn full_network_matches_finite_differences() {
    let r = network(network_config(), 3, 5);
    assert!(r.passed(), "{:?}", r.failure);
    assert!(r.checked > 1000);
    eprintln!("checked {} parameters, retried {} at kinks, worst rel err {:.2e}", r.checked, r.retried, r.worst);
}

#[test]
fn single_head_network_matches_finite_differences() {
    let cfg = NetworkConfig {
        resolution: 16,
        widths: vec![4],
        head: HeadMode::Single,
        ..network_config()
    };
    let r = network(cfg, 2, 8);
    assert!(r.passed(), "{:?}", r.failure);
}
