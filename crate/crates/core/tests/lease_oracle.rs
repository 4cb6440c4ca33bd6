mod oracles;

use std::time::Instant;

#[test]
fn thousand_requests_match_pairwise_oracle() {
    let started = Instant::now();
    let admitted = oracles::lease::run(7, 1000).unwrap();
    assert!(admitted > 10 && admitted < 1000, "admitted {admitted}");
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn other_seeds_agree_too() {
    for seed in 100..110 {
        oracles::lease::run(seed, 300).unwrap();
    }
}
