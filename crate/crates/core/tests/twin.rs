use std::f64::consts::TAU;

use peda::grid::{Field3, Grid};
use peda::twin::{relative_rms, seed_floats, synth_obs, truth_run, TwinConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> TwinConfig {
    TwinConfig { nx: 16, ny: 16, nz: 5, spinup_steps: 200, window_steps: 40, floats: 50, obs_times: 10, ..Default::default() }
}

#[test]
fn truth_is_deterministic_and_energetic() {
    let cfg = small();
    let a = truth_run(&cfg).unwrap();
    let b = truth_run(&cfg).unwrap();
    assert_eq!(a, b);
    let ke: Vec<f64> = a.iter().map(|s| s.kinetic_energy()).collect();
    assert!(ke.iter().all(|&e| e > 0.0 && e.is_finite()));
    let (lo, hi) = ke.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    // Spun up: the energy varies little across one window.
    assert!(hi <= 1.5 * lo, "{lo} {hi}");
}

#[test]
fn observation_noise_has_the_requested_statistics() {
    let sd = 0.01;
    let cfg = TwinConfig { obs_noise: sd, ..small() };
    let clean_cfg = TwinConfig { obs_noise: 0.0, ..small() };
    let truth = truth_run(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let fs = seed_floats(&cfg, &mut rng);
    let noisy = synth_obs(&truth, &fs, &cfg, &mut rng).unwrap();
    let clean = synth_obs(&truth, &fs, &clean_cfg, &mut rng).unwrap();
    assert_eq!(noisy.len(), 500);
    let wrap = |d: f64| (d + TAU / 2.0).rem_euclid(TAU) - TAU / 2.0;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for (a, b) in noisy.records.iter().zip(&clean.records) {
        assert_eq!((a.float_id, a.time_index), (b.float_id, b.time_index));
        for c in 0..2 {
            let e = wrap(a.pos[c] - b.pos[c]);
            sum[c] += e;
            sq[c] += e * e;
        }
    }
    let n = noisy.len() as f64;
    for c in 0..2 {
        let mean = sum[c] / n;
        assert!(mean.abs() <= 3.0 * sd / n.sqrt(), "mean {mean}");
        let var = sq[c] / n - mean * mean;
        assert!((var.sqrt() / sd - 1.0).abs() <= 0.15, "sd {}", var.sqrt());
    }
}

#[test]
fn relative_rms_matches_direct_quadrature() {
    let g = Grid::new(10, 6, 7, 2.0).unwrap();
    let truth = Field3::from_fn(g, |x, y, z| (x + 0.3).sin() * y.cos() + z);
    let run = Field3::from_fn(g, |x, y, z| x.cos() * (2.0 * y).sin() - z * z);
    // Trapezoid weights in z, uniform horizontally.
    let w = |k: usize| if k == 0 || k == g.nz - 1 { 0.5 } else { 1.0 };
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..g.nz {
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (t, r) = (truth.at(i, j, k), run.at(i, j, k));
                num += w(k) * (r - t) * (r - t);
                den += w(k) * t * t;
            }
        }
    }
    let got = relative_rms(&run, &truth).unwrap();
    assert!((got - (num / den).sqrt()).abs() <= 1e-12);
}
