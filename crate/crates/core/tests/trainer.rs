//! Dataset generation, training loop and split evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use nsplan::gridmap::OccupancyGrid;
use nsplan::kinematics::{Configuration, VehicleParams};
use nsplan::lattice::{LatticeConfig, LatticePlanner};
use nsplan::loss::{total_loss_with, GoalRegion, LossConfig, LossContext};
use nsplan::policy::{load_checkpoint, ArchConfig, PolicyParams};
use nsplan::spline::{chain, discretize, SegmentSpec};
use nsplan::trainer::{
    evaluate_split, generate_dataset, train, Dataset, DatasetMeta, GenConfig, GoalPose, Scenario, Split, TrainConfig,
    BEST_DIR, METRICS_FILE,
};

fn tiny_gen(seed: u64) -> GenConfig {
    GenConfig {
        train: 6,
        val: 3,
        test: 3,
        scenarios_per_map: 3,
        obstacle_count_max: 2,
        seed,
        ..GenConfig::default()
    }
}

fn sources() -> Vec<(String, OccupancyGrid)> {
    vec![("north".into(), OccupancyGrid::empty()), ("south".into(), OccupancyGrid::empty())]
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generation_is_byte_identical_under_a_fixed_seed() {
    let v = VehicleParams::kia_rio();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (meta, timing) = generate_dataset(&sources(), &tiny_gen(11), &v, a.path()).unwrap();
    generate_dataset(&sources(), &tiny_gen(11), &v, b.path()).unwrap();
    let mut fa = files(a.path());
    let mut fb = files(b.path());
    assert!(fa.remove("timing.json").is_some());
    assert!(fb.remove("timing.json").is_some());
    assert_eq!(fa, fb);

    // bookkeeping: every attempt is either kept or counted as skipped
    for (name, st) in &meta.splits {
        assert_eq!(st.attempts, st.scenarios + st.skipped, "{name}");
        assert!(st.prefiltered <= st.skipped);
        assert!((st.skip_rate - st.skipped as f64 / st.attempts as f64).abs() < 1e-12);
    }
    assert_eq!(meta.splits["train"].scenarios, 6);
    let planned: usize = meta.splits.values().map(|s| s.attempts - s.prefiltered).sum();
    assert_eq!(timing.plans, planned);
    assert!(timing.mean_plan_ms > 0.0 && timing.max_plan_ms >= timing.mean_plan_ms);
    let stored: DatasetMeta = serde_json::from_slice(&fa["meta.json"]).unwrap();
    assert_eq!(stored, meta);

    let c = tempfile::tempdir().unwrap();
    generate_dataset(&sources(), &tiny_gen(12), &v, c.path()).unwrap();
    let mut fc = files(c.path());
    fc.remove("timing.json");
    assert_ne!(fa, fc);
}

#[test]
fn splits_are_disjoint_and_references_revalidate() {
    let v = VehicleParams::kia_rio();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&sources(), &tiny_gen(5), &v, dir.path()).unwrap();
    let ds = Dataset::load(dir.path(), &v).unwrap();

    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    for split in Split::ALL {
        for s in ds.split(split) {
            assert_eq!(*seen.entry(s.map.as_str()).or_insert(split), split, "map {} shared", s.map);
            assert_eq!(s.q0, Configuration::default());
            assert!(s.goal.theta.abs() < FRAC_PI_2);
            let spacing = s.ref_path.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
            assert!(spacing.fold(0.0, f64::max) <= 0.1 + 1e-12);
        }
    }
    let test_sources: BTreeSet<&str> =
        ds.meta.maps.iter().filter(|m| m.split == Split::Test).map(|m| m.source.as_str()).collect();
    assert_eq!(test_sources, BTreeSet::from(["south"]));
    assert!(ds.meta.maps.iter().filter(|m| m.split != Split::Test).all(|m| m.source == "north"));

    // a corrupted reference is caught on load
    let path = dir.path().join("scenarios/train.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<Scenario> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[0].ref_specs[0].dy += 0.3;
    let bad: String = lines.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect();
    fs::write(&path, bad).unwrap();
    assert!(Dataset::load(dir.path(), &v).is_err());
}

#[test]
fn straight_goals_on_an_empty_map_are_always_solved() {
    let v = VehicleParams::kia_rio();
    let planner = LatticePlanner::new(
        &v,
        LatticeConfig {
            budget: GenConfig::default().budget,
            ..LatticeConfig::default()
        },
    );
    let grid = OccupancyGrid::empty();
    // the body's front overhang leaves the 25.6 m map beyond x = 20
    for k in 2..=20 {
        let goal = GoalRegion::new(k as f64, 0.0, 0.0);
        assert!(planner.plan(&grid, &Configuration::default(), &goal).is_ok(), "x = {k}");
    }
}

fn tiny_train(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        n_segments: 2,
        epochs,
        batch_size: 4,
        lr,
        seed: 3,
        arch: ArchConfig::tiny(),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_and_metrics() {
    let v = VehicleParams::kia_rio();
    let data = tempfile::tempdir().unwrap();
    generate_dataset(&sources(), &tiny_gen(2), &v, data.path()).unwrap();
    let ds = Dataset::load(data.path(), &v).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny_train(3, 0.0);
    let s = train(&ds, &cfg, &v, out.path()).unwrap();
    assert_eq!(s.epochs.len(), 3);
    assert_eq!(s.final_params, PolicyParams::init(&cfg.arch, cfg.seed).values);
    for r in &s.epochs[1..] {
        assert_eq!(r.train, s.epochs[0].train);
        assert_eq!(r.val, s.epochs[0].val);
    }
    let log = fs::read_to_string(out.path().join(METRICS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);
    let (best, manifest) = load_checkpoint(&out.path().join(BEST_DIR)).unwrap();
    assert_eq!(best.values, s.final_params);
    assert_eq!(manifest.n_segments, Some(2));
}

#[test]
fn training_moves_parameters_and_logs_every_epoch() {
    let v = VehicleParams::kia_rio();
    let data = tempfile::tempdir().unwrap();
    generate_dataset(&sources(), &tiny_gen(2), &v, data.path()).unwrap();
    let ds = Dataset::load(data.path(), &v).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny_train(2, 1e-2);
    let s = train(&ds, &cfg, &v, out.path()).unwrap();
    assert_ne!(s.final_params, PolicyParams::init(&cfg.arch, cfg.seed).values);
    assert!((1..=2).contains(&s.best_epoch));
    let logged: Vec<serde_json::Value> = fs::read_to_string(out.path().join(METRICS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(logged.len(), 2);
    assert_eq!(logged[1]["epoch"], 2);
    assert!(logged[0]["val"]["accuracy"].is_number());

    let again = train(&ds, &cfg, &v, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(again.final_params, s.final_params);
}

#[test]
fn tcurv_is_left_out_of_the_total_when_disabled() {
    let v = VehicleParams::kia_rio();
    let data = tempfile::tempdir().unwrap();
    generate_dataset(&sources(), &tiny_gen(8), &v, data.path()).unwrap();
    let ds = Dataset::load(data.path(), &v).unwrap();
    let off = LossConfig {
        tcurv_enabled: false,
        ..LossConfig::default()
    };
    let mut curved = 0;
    for s in ds.split(Split::Train) {
        let path = s.ref_spline(&v).unwrap();
        let grid = ds.grid(s);
        let with = total_loss_with(&path, &LossContext::new(grid, &v, &s.ref_path, s.goal.region(), LossConfig::default()));
        let without = total_loss_with(&path, &LossContext::new(grid, &v, &s.ref_path, s.goal.region(), off));
        assert!(with.feasible && without.feasible);
        assert_eq!(without.total, without.coll + without.curv + without.over);
        assert_eq!(with.total, with.tcurv);
        curved += (with.tcurv > 0.0) as usize;
    }
    assert!(curved > 0, "no reference path bends");

    let out = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        tcurv_enabled: false,
        ..tiny_train(1, 1e-3)
    };
    let s = train(&ds, &cfg, &v, out.path()).unwrap();
    for r in &s.epochs {
        let l = &r.train.loss;
        assert!((l.total - (l.coll + l.curv + l.over)).abs() <= 1e-12 * l.total.max(1.0));
    }
}

/// In-memory dataset with one empty map and straight-ahead goals.
fn straight_dataset(xs: &[f64]) -> Dataset {
    let map = "empty_00000".to_string();
    let scenarios = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| Scenario {
            id: format!("s{i}"),
            map: map.clone(),
            q0: Configuration::default(),
            goal: GoalPose { x, y: 0.0, theta: 0.0 },
            ref_specs: vec![SegmentSpec::straight(x)],
            ref_path: vec![[0.0, 0.0], [x, 0.0]],
        })
        .collect();
    Dataset {
        root: ".".into(),
        meta: DatasetMeta {
            config: GenConfig::default(),
            sources: vec!["empty".into()],
            maps: Vec::new(),
            splits: BTreeMap::new(),
        },
        maps: BTreeMap::from([(map, OccupancyGrid::empty())]),
        splits: BTreeMap::from([(Split::Test, scenarios)]),
    }
}

#[test]
fn straight_split_with_zero_weights() {
    // zero weights emit 5 m straight segments
    let v = VehicleParams::kia_rio();
    let ds = straight_dataset(&[5.0, 10.0, 15.0]);
    let params = PolicyParams::zeros(&ArchConfig::tiny());
    for (n, x) in [(1, 5.0), (2, 10.0), (3, 15.0)] {
        let list: Vec<Scenario> = ds.split(Split::Test).iter().filter(|s| s.goal.x == x).cloned().collect();
        let m = evaluate_split(&params, &ds, &list, &v, n, LossConfig::default()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.mean_turn.abs() < 1e-12);
        assert!((m.mean_length - x).abs() < 1e-9, "{} vs {x}", m.mean_length);
    }
    // a 5 m rollout misses the farther goals
    let m = evaluate_split(&params, &ds, ds.split(Split::Test), &v, 1, LossConfig::default()).unwrap();
    assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn quarter_turn_accumulates_half_pi() {
    // y' rises from 0 to 1 with zero end curvature when y = x/2: the heading
    // turns monotonically by pi/4 per segment
    let v = VehicleParams::kia_rio();
    let specs = [SegmentSpec::new(6.0, 3.0, 1.0, 0.0); 2];
    let path = chain(&Configuration::default(), &v, &specs).unwrap();
    let d = discretize(&path);
    assert!((d.accumulated_turn() - FRAC_PI_2).abs() < 1e-2);
    let end = path.end_pose();
    assert!((end.theta - FRAC_PI_2).abs() < 1e-9);
}

#[test]
fn re_evaluation_is_identical() {
    let v = VehicleParams::kia_rio();
    let data = tempfile::tempdir().unwrap();
    generate_dataset(&sources(), &tiny_gen(4), &v, data.path()).unwrap();
    let ds = Dataset::load(data.path(), &v).unwrap();
    let params = PolicyParams::init(&ArchConfig::tiny(), 9);
    let run = || evaluate_split(&params, &ds, ds.split(Split::Val), &v, 3, LossConfig::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.count, 3);
    assert_eq!((a.accuracy, a.mean_turn, a.mean_length, a.loss), (b.accuracy, b.mean_turn, b.mean_length, b.loss));
}
