use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lgcp_cv::geodata::{CampaignDomains, DomainKind, PointPattern};

const BIN: &str = env!("CARGO_BIN_EXE_lgcp-cv");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_config(sub: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = run(&args);
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

/// 16 × 16 grid of 5 m cells: the west half is the effort habitat (code 2), the
/// east half cycles through the other four classes in 4 × 4 blocks.
fn write_habitat(dir: &Path) {
    let mut asc = String::from("ncols 16\nnrows 16\nxllcorner 0\nyllcorner 0\ncellsize 5\nNODATA_value -9999\n");
    for r in 0..16 {
        let row: Vec<String> = (0..16)
            .map(|c| {
                if c < 8 {
                    "2".to_string()
                } else {
                    [1, 3, 4, 5][(r / 4 + c / 4) % 4].to_string()
                }
            })
            .collect();
        asc.push_str(&row.join(" "));
        asc.push('\n');
    }
    fs::write(dir.join("habitat.asc"), asc).unwrap();
    fs::write(
        dir.join("legend.csv"),
        "code,label\n1,Hard Bottom\n2,P. oceanica\n3,Sand\n4,Rocks\n5,Dead matte\n",
    )
    .unwrap();
    let mut depth = String::from("ncols 16\nnrows 16\nxllcorner 0\nyllcorner 0\ncellsize 5\nNODATA_value -9999\n");
    for r in 0..16 {
        let row: Vec<String> = (0..16).map(|c| format!("{}", 5.0 + 0.5 * r as f64 + 0.1 * c as f64)).collect();
        depth.push_str(&row.join(" "));
        depth.push('\n');
    }
    fs::write(dir.join("depth.asc"), depth).unwrap();
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_raster_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "[data]\nhabitat = \"nowhere/habitat.asc\"\nlegend = \"legend.csv\"\ncampaigns = 1\n[simulate]\nintercept = -3\n",
    );
    let out = run_config("simulate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/habitat.asc"), "{err}");
}

#[test]
fn unknown_subcommand_and_bad_config_are_usage_errors() {
    assert_eq!(run(&["explode"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "[fit]\nunknown_key = 1\n");
    let out = run_config("fit", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.toml"));
}

#[test]
fn rank_missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["rank", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn constant_intensity_simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "seed = 11\n[data]\ngrid_rows = 10\ngrid_cols = 10\ncell_size = 1.0\ncampaigns = 2\n[simulate]\nintensity = 2.0\n",
    );
    for name in ["a", "b"] {
        let out = run_config("simulate", &cfg, &["--out", dir.path().join(name).to_str().unwrap()]);
        assert!(out.status.success());
    }
    let a = fs::read(dir.path().join("a/points.csv")).unwrap();
    let b = fs::read(dir.path().join("b/points.csv")).unwrap();
    assert_eq!(a, b);
    let c = run_config("simulate", &cfg, &["--seed", "12", "--out", dir.path().join("c").to_str().unwrap()]);
    assert!(c.status.success());
    assert_ne!(a, fs::read(dir.path().join("c/points.csv")).unwrap());
    let truth = fs::read_to_string(dir.path().join("a/truth.csv")).unwrap();
    assert!(truth.starts_with("parameter,value\nIntercept,"));
}

#[test]
fn nine_campaign_points_stay_in_their_domains() {
    let dir = tempfile::tempdir().unwrap();
    write_habitat(dir.path());
    write(dir.path(), "domains.csv", &CampaignDomains::nine_campaign_layout().to_csv());
    let cfg = write(
        dir.path(),
        "run.toml",
        "seed = 5\nout = \"sim\"\n[data]\nhabitat = \"habitat.asc\"\nlegend = \"legend.csv\"\nreference_class = \"Hard Bottom\"\n\
         domains = \"domains.csv\"\n[covariates]\ndepth = \"depth.asc\"\n\
         [simulate]\nintercept = -3.5\neffort = -0.4\ncampaign_variance = 0.1\nfield_sd = 0.5\nfield_range = 20\n\
         [simulate.coefficients]\ndepth = 0.3\nSand = 0.2\n",
    );
    let out = run_config("simulate", &cfg, &[]);
    assert!(out.status.success());
    let pattern = PointPattern::load(dir.path().join("sim/points.csv"), 9).unwrap();
    assert!(pattern.len() > 100);
    let layout = CampaignDomains::nine_campaign_layout();
    for p in &pattern.points {
        let west = p.x < 40.0;
        match layout.kind(p.campaign) {
            DomainKind::D1 => assert!(west, "{p:?}"),
            DomainKind::D2 => assert!(!west, "{p:?}"),
            DomainKind::D => assert!((0.0..80.0).contains(&p.x) && (0.0..80.0).contains(&p.y)),
        }
    }
    let counts = pattern.counts_per_campaign();
    assert!(counts.iter().all(|&n| n > 0), "{counts:?}");
    let truth = fs::read_to_string(dir.path().join("sim/truth.csv")).unwrap();
    for name in ["Intercept", "P. oceanica", "depth", "Sand", "Campaign 9", "Range for GP", "Std. for GP"] {
        assert!(truth.lines().any(|l| l.starts_with(&format!("{name},"))), "{name} missing from\n{truth}");
    }
}

/// 400 uniform points on a 100 m × 100 m square with 5 m cells.
fn homogeneous_fixture(dir: &Path) -> PathBuf {
    let cfg = write(
        dir,
        "run.toml",
        "seed = 21\n[data]\ngrid_rows = 20\ngrid_cols = 20\ncell_size = 5.0\ncampaigns = 1\npoints = \"points.csv\"\n\
         [fit]\nmodel_id = \"intercept\"\nspatial_field = false\ndraws = 400\n",
    );
    let mut csv = String::from("x,y,campaign\n");
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut unif = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..400 {
        csv.push_str(&format!("{},{},1\n", 100.0 * unif(), 100.0 * unif()));
    }
    write(dir, "points.csv", &csv);
    cfg
}

#[test]
fn fit_summary_schema_and_homogeneous_intercept() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = homogeneous_fixture(dir.path());
    let a = dir.path().join("a");
    let out = run_config("fit", &cfg, &["--out", a.to_str().unwrap()]);
    assert!(out.status.success());
    let summary = fs::read_to_string(a.join("posterior_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "parameter,mean,sd,q2.5,q50,q97.5");
    let mut intercept = None;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6, "{line}");
        let nums: Vec<f64> = cols[1..].iter().map(|c| c.parse().unwrap()).collect();
        assert!(nums[2] <= nums[3] && nums[3] <= nums[4], "{line}");
        if cols[0] == "Intercept" {
            intercept = Some(nums[0]);
        }
    }
    let mu0 = intercept.expect("intercept row");
    let oracle = (400.0f64 / 10_000.0).ln();
    assert!((mu0 - oracle).abs() < 0.15, "{mu0} vs {oracle}");
    assert!(!a.join("field_posterior_mean.asc").exists());

    let b = dir.path().join("b");
    assert!(run_config("fit", &cfg, &["--out", b.to_str().unwrap()]).status.success());
    assert_eq!(summary, fs::read_to_string(b.join("posterior_summary.csv")).unwrap());
}

#[test]
fn fit_with_field_writes_ascii_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = homogeneous_fixture(dir.path());
    let text = fs::read_to_string(&cfg).unwrap().replace("spatial_field = false\ndraws = 400", "draws = 50");
    fs::write(&cfg, text).unwrap();
    let out = run_config("fit", &cfg, &["--out", dir.path().join("o").to_str().unwrap()]);
    assert!(out.status.success());
    let grid = lgcp_cv::geodata::load_raster(dir.path().join("o/field_posterior_mean.asc"), lgcp_cv::geodata::RasterKind::Continuous)
        .unwrap();
    assert_eq!((grid.geometry.n_rows, grid.geometry.n_cols), (20, 20));
    let summary = fs::read_to_string(dir.path().join("o/posterior_summary.csv")).unwrap();
    assert!(summary.contains("\nRange for GP,") && summary.contains("\nStd. for GP,"));
}

fn crossval_fixture(dir: &Path) -> PathBuf {
    write_habitat(dir);
    write(dir, "domains.csv", "campaign,domain\n1,D\n2,D\n");
    let cfg = write(
        dir,
        "run.toml",
        "seed = 3\n[data]\nhabitat = \"habitat.asc\"\nlegend = \"legend.csv\"\nreference_class = \"Hard Bottom\"\n\
         domains = \"domains.csv\"\npoints = \"sim/points.csv\"\n[covariates]\ndepth = \"depth.asc\"\n\
         [simulate]\nintercept = -3.0\neffort = -0.4\ncampaign_effects = [0.1, -0.1]\n[simulate.coefficients]\ndepth = 0.3\n\
         [crossval]\nmodels = \"sweep.csv\"\nfolds = 5\ndraws = 50\npartition_rows = 4\npartition_cols = 4\nspatial_field = false\n",
    );
    write(dir, "sweep.csv", "model_id,depth,Sand\nnull,0,0\ndepth,1,0\nfull,1,1\n");
    assert!(run_config("simulate", &cfg, &["--out", dir.join("sim").to_str().unwrap()]).status.success());
    cfg
}

#[test]
fn crossval_sweep_counts_and_worker_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = crossval_fixture(dir.path());
    let one = dir.path().join("w1");
    let eight = dir.path().join("w8");
    assert!(run_config("crossval", &cfg, &["--workers", "1", "--out", one.to_str().unwrap()]).status.success());
    assert!(run_config("crossval", &cfg, &["--workers", "8", "--out", eight.to_str().unwrap()]).status.success());
    let table = fs::read_to_string(one.join("crps_by_model.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    assert_eq!(table.lines().next().unwrap(), "model_id,depth,Sand,crps");
    assert_eq!(table, fs::read_to_string(eight.join("crps_by_model.csv")).unwrap());
    assert_eq!(fs::read_to_string(one.join("failures.csv")).unwrap(), "model_id,fold,message\n");
    for model in ["null", "depth", "full"] {
        for t in 1..=2 {
            for name in [format!("residual_map_t{t}.csv"), format!("crps_map_t{t}.csv")] {
                let a = fs::read(one.join("maps").join(model).join(&name)).unwrap();
                assert_eq!(a, fs::read(eight.join("maps").join(model).join(&name)).unwrap());
            }
        }
    }
    let map = fs::read_to_string(one.join("maps/full/residual_map_t1.csv")).unwrap();
    assert_eq!(map.lines().next().unwrap(), "g,xmin,ymin,xmax,ymax,residual_mean,residual_sd");
    assert_eq!(map.lines().count(), 17);

    let out = run(&["rank", "--config", cfg.to_str().unwrap(), "--out", one.to_str().unwrap()]);
    assert!(out.status.success());
    let ranked = fs::read_to_string(one.join("ranked_models.csv")).unwrap();
    assert_eq!(ranked.lines().next().unwrap(), "rank,model_id,depth,Sand,crps");
    let scores: Vec<f64> = ranked.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 3);
    assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{ranked}");
}

#[test]
fn crossval_rejects_single_fold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = crossval_fixture(dir.path());
    let text = fs::read_to_string(&cfg).unwrap().replace("folds = 5", "folds = 1");
    fs::write(&cfg, text).unwrap();
    let out = run_config("crossval", &cfg, &["--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn crossval_partial_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = crossval_fixture(dir.path());
    // With a single point, the fold that validates it trains on nothing.
    let pts = fs::read_to_string(dir.path().join("sim/points.csv")).unwrap();
    let single: String = pts.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("sim/points.csv"), single).unwrap();
    let out = run_config("crossval", &cfg, &["--out", dir.path().join("o").to_str().unwrap()]);
    let failures = fs::read_to_string(dir.path().join("o/failures.csv")).unwrap();
    assert_eq!(out.status.code(), Some(1), "{failures}");
    assert!(failures.lines().count() > 1);
    let table = fs::read_to_string(dir.path().join("o/crps_by_model.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}
