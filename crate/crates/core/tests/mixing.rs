mod common;

use common::*;
use seqmix::corpus::gen_copy_task;
use seqmix::mixing::*;

// Upper 0.1% point of chi-square with 9 degrees of freedom.
const CHI2_999_DF9: f64 = 27.877;

#[test]
fn generated_fraction_matches_beta() {
    let p = small_params(3);
    let d = gen_copy_task(3200, 3, 8, false, 17).unwrap();
    let cfg = MixConfig { beta: 0.2, temperature: 1.0, seed: 99 };
    let items = build_ds(&p, &d, &cfg, 1).unwrap().items;
    let positions: usize = items.iter().map(|m| m.mixed.len()).sum();
    let generated: usize = items.iter().map(|m| m.generated_count()).sum();
    assert!(positions >= 20_000, "{positions}");
    let frac = generated as f64 / positions as f64;
    assert!((0.188..=0.212).contains(&frac), "{frac}");

    // the same law holds at every position
    let max_len = items.iter().map(|m| m.mixed.len()).max().unwrap();
    let mut stat = 0.0;
    for j in 0..max_len {
        let at_j: Vec<&MixedExample> = items.iter().filter(|m| m.mixed.len() > j).collect();
        let n = at_j.len() as f64;
        let g = at_j.iter().filter(|m| m.flags[j] == Choice::Generated).count() as f64;
        stat += (g - n * 0.2).powi(2) / (n * 0.2 * 0.8);
    }
    assert!(max_len <= 9);
    assert!(stat < CHI2_999_DF9, "chi2 {stat}");

    for m in &items {
        assert_eq!(m.mixed.len(), m.continuation.len());
        for j in 0..m.mixed.len() {
            if m.flags[j] == Choice::GroundTruth {
                assert_eq!(m.mixed[j], m.continuation[j]);
            }
        }
    }
}

#[test]
fn beta_extremes() {
    let p = small_params(3);
    let d = gen_copy_task(200, 3, 8, true, 1).unwrap();
    let zero = build_ds(&p, &d, &MixConfig { beta: 0.0, ..MixConfig::default() }, 1).unwrap().items;
    assert_eq!(zero.len(), d.len());
    assert!(zero.iter().zip(&d.examples).all(|(m, e)| m.mixed == e.continuation));
    let one = build_ds(&p, &d, &MixConfig { beta: 1.0, ..MixConfig::default() }, 1).unwrap().items;
    assert!(one.iter().all(|m| m.flags.iter().all(|f| *f == Choice::Generated)));
}

#[test]
fn different_snapshot_changes_only_from_first_generated_position() {
    let a = small_params(1);
    let b = small_params(2);
    let d = gen_copy_task(300, 4, 8, false, 5).unwrap();
    let cfg = MixConfig { beta: 0.3, ..MixConfig::default() };
    let ma = build_ds(&a, &d, &cfg, 1).unwrap().items;
    let mb = build_ds(&b, &d, &cfg, 1).unwrap().items;
    let mut differing = 0;
    for (x, y) in ma.iter().zip(&mb) {
        // coin flips consume the same stream positions regardless of weights
        assert_eq!(x.flags, y.flags);
        let first = x.flags.iter().position(|f| *f == Choice::Generated).unwrap_or(x.flags.len());
        assert_eq!(x.mixed[..first], y.mixed[..first]);
        differing += (x.mixed != y.mixed) as usize;
    }
    assert!(differing > 0);
}

#[test]
fn worker_count_does_not_change_bytes() {
    let p = small_params(6);
    let d = gen_copy_task(150, 3, 8, false, 8).unwrap();
    let cfg = MixConfig { beta: 0.5, temperature: 1.0, seed: 4 };
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.jsonl");
    let eight = dir.path().join("eight.jsonl");
    write_ds(&one, &d.task_name, d.seed, &build_ds(&p, &d, &cfg, 1).unwrap().items).unwrap();
    write_ds(&eight, &d.task_name, d.seed, &build_ds(&p, &d, &cfg, 8).unwrap().items).unwrap();
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&eight).unwrap());
}
