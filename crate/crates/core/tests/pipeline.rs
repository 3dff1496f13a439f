use proptest::prelude::*;
use spe_core::checkpoint::Checkpoint;
use spe_core::integrator::{integrate_segment, RecordOptions, SegmentStart};
use spe_core::io::{read_csv_table, trajectory_header, write_trajectory_csv};
use spe_core::prelude::*;
use spe_core::state::random_smooth_state;

const SMALL: &str = "[geometry]\nnh = 2\nnz = 2\n[integrator]\ndt = 0.002\nhorizon = 0.1\nseed = 11\n[coupling]\nupsilon = 0.1\ninner_steps = 50\n";

fn small() -> RunConfig {
    RunConfig::from_toml(SMALL).unwrap().0
}

#[test]
fn config_to_checkpoint_to_resume() {
    let cfg = small();
    let st = cfg.stepper().unwrap();
    let spectrum = cfg.spectrum().unwrap();
    let y0 = cfg.initial.build(&spectrum, cfg.integrator.seed).unwrap();
    let stream = NoiseStream::trajectory(cfg.integrator.seed, 0);
    let opts = RecordOptions::default();
    let full = integrate(&st, &y0, cfg.integrator.horizon, stream, &opts).unwrap();
    assert_eq!(full.len(), 51);

    let head = integrate_segment(&st, &y0, SegmentStart::default(), 20, stream, &opts).unwrap();
    let ck = Checkpoint {
        config_hash: cfg.dynamics_hash(),
        time: 20.0 * cfg.integrator.dt,
        step: 20,
        stream,
        cumulative_h3: *head.cumulative_h3.last().unwrap(),
        state: head.final_state.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path, &cfg.dynamics_hash(), false).unwrap();
    let tail = integrate_segment(&st, &back.state, SegmentStart { step: back.step, cumulative_h3: back.cumulative_h3 }, 30, back.stream, &opts)
        .unwrap();
    assert_eq!(&full.sq_norms[20..], &tail.sq_norms[..]);
    assert_eq!(&full.cumulative_h3[20..], &tail.cumulative_h3[..]);
    assert_eq!(full.final_state, tail.final_state);

    // A different noise exponent changes the hash and the checkpoint is refused.
    let other = RunConfig::from_toml(&SMALL.replace("[geometry]", "[noise]\nbeta = 3.9\n[geometry]")).unwrap().0;
    assert!(Checkpoint::load(&path, &other.dynamics_hash(), false).is_err());
    assert!(Checkpoint::load(&path, &other.dynamics_hash(), true).is_ok());
}

#[test]
fn trajectory_csv_reads_back_bit_exact() {
    let cfg = small();
    let st = cfg.stepper().unwrap();
    let spectrum = cfg.spectrum().unwrap();
    let y0 = cfg.initial.build(&spectrum, 3).unwrap();
    let opts = RecordOptions { observables: ObservableSet::standard(&spectrum, 4, 0.5), stride: 5, ..RecordOptions::default() };
    let rec = integrate(&st, &y0, 0.1, NoiseStream::trajectory(3, 2), &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_trajectory_csv(&rec, std::fs::File::create(&p).unwrap()).unwrap();
    let (header, rows) = read_csv_table(&p).unwrap();
    assert_eq!(header, trajectory_header(&rec));
    assert_eq!(rows.len(), rec.len());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].to_bits(), rec.times[i].to_bits());
        for c in 0..4 {
            assert_eq!(row[1 + c].to_bits(), rec.sq_norms[i][c].to_bits());
        }
        assert_eq!(&row[7..], &rec.observables[i][..]);
    }
}

#[test]
fn unforced_dissipative_run_decays() {
    let cfg = RunConfig::from_toml(&format!("{SMALL}[noise]\nkind = \"none\"\n")).unwrap().0;
    let st = cfg.stepper().unwrap();
    let y0 = cfg.initial.build(&cfg.spectrum().unwrap(), 1).unwrap();
    let rec = integrate(&st, &y0, 0.1, NoiseStream::trajectory(1, 0), &RecordOptions::default()).unwrap();
    assert!(rec.sq_norms.windows(2).all(|w| w[1][0] <= w[0][0]));
    // Every mode decays at least at the first eigenvalue rate.
    let bound = (-2.0 * std::f64::consts::PI.powi(2) * 0.1).exp() * rec.sq_norms[0][0];
    assert!(rec.sq_norms.last().unwrap()[0] <= bound * (1.0 + 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), index in 0u64..(1 << 56), time in 0.0f64..1e6, step in any::<u64>(), cum in 0.0f64..1e9) {
        let spectrum = small().spectrum().unwrap();
        let stream = NoiseStream::trajectory(seed, index);
        let state = random_smooth_state(&spectrum, &stream, 1.0, 1.0);
        let ck = Checkpoint { config_hash: [7; 32], time, step, stream, cumulative_h3: cum, state };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        prop_assert_eq!(back.state, ck.state);
        prop_assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn config_round_trips_through_toml(nh in 1usize..6, nz in 1usize..6, beta in 3.55f64..4.0, seed in any::<u64>()) {
        let text = format!("[geometry]\nnh = {nh}\nnz = {nz}\n[noise]\nbeta = {beta}\n[integrator]\nseed = {seed}\n");
        let (cfg, _) = RunConfig::from_toml(&text).unwrap();
        let (again, _) = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(again.dynamics_hash(), cfg.dynamics_hash());
        prop_assert_eq!(again.integrator.seed, seed);
    }
}
