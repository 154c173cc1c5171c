use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uwamod_core::evaluation::rate_sweep;
use uwamod_core::io::{load_modem, Dataset};
use uwamod_core::modem::zp_ofdm_modem;
use uwamod_core::{spawn_stream, SystemConfig};
use uwamod_net::{finalize_modem, init_params, ArchConfig, NetDims};

fn uwamod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwamod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = uwamod(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> (String, Vec<csv::StringRecord>, csv::StringRecord) {
    let text = std::fs::read_to_string(path).unwrap();
    let comment = text.lines().next().unwrap().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let rows = reader.records().map(|r| r.unwrap()).collect();
    (comment, rows, headers)
}

#[test]
fn gen_dataset_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (p(dir.path(), "a.uwad"), p(dir.path(), "b.uwad"));
    ok(&["gen-dataset", "--out", s(&a), "--count", "5", "--seed", "9"]);
    ok(&["gen-dataset", "--out", s(&b), "--count", "5", "--seed", "9"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = p(dir.path(), "c.uwad");
    ok(&["gen-dataset", "--out", s(&c), "--count", "5", "--seed", "9", "--split", "val"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let empty = p(dir.path(), "empty.uwad");
    ok(&["gen-dataset", "--out", s(&empty), "--count", "0"]);
    assert!(Dataset::load(&empty).unwrap().pairs.is_empty());
    assert!(ok(&["inspect", s(&empty)]).contains("pairs: 0"));

    let paper = p(dir.path(), "paper.uwad");
    ok(&["--profile", "paper", "gen-dataset", "--out", s(&paper), "--count", "10"]);
    let json_len = SystemConfig::paper().to_json().len();
    let header = 4 + 4 + 8 + json_len + 8;
    let want = header + 10 * (228 * 128 + 70 * 70) * 16;
    assert_eq!(std::fs::metadata(&paper).unwrap().len() as usize, want);
}

#[test]
fn config_file_and_seed_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "cfg.json");
    let mut config = SystemConfig::desk();
    config.seed = 5;
    std::fs::write(&cfg, config.to_json()).unwrap();
    let out = p(dir.path(), "x.uwad");
    ok(&["--config", s(&cfg), "--seed", "11", "--threads", "1", "gen-dataset", "--out", s(&out), "--count", "2"]);
    assert_eq!(Dataset::load(&out).unwrap().config.seed, 11);

    std::fs::write(&cfg, "{\"bogus\": 1}").unwrap();
    assert!(!uwamod(&["--config", s(&cfg), "gen-dataset", "--out", s(&out), "--count", "1"]).status.success());
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn train_small(e1: &str, e2: &str) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    ok(&["gen-dataset", "--out", s(&p(&root, "train.uwad")), "--count", "8"]);
    ok(&["gen-dataset", "--out", s(&p(&root, "val.uwad")), "--count", "4", "--split", "val"]);
    ok(&[
        "train",
        "--train",
        s(&p(&root, "train.uwad")),
        "--val",
        s(&p(&root, "val.uwad")),
        "--checkpoint",
        s(&p(&root, "net.uwnp")),
        "--modem",
        s(&p(&root, "learned.uwmd")),
        "--e1",
        e1,
        "--e2",
        e2,
        "--batch-size",
        "4",
        "--arch",
        "tiny",
    ]);
    Trained { _dir: dir, root }
}

#[test]
fn train_smoke_path_equals_untrained_finalize() {
    let t = train_small("0", "0");
    let modem = load_modem(p(&t.root, "learned.uwmd")).unwrap();
    let config = SystemConfig::desk();
    let params = init_params(
        &ArchConfig::tiny(),
        NetDims::from(config.dims().unwrap()),
        &mut spawn_stream(config.seed, "init"),
    )
    .unwrap();
    let val = Dataset::load(p(&t.root, "val.uwad")).unwrap();
    let want = finalize_modem(&params, &val.pairs).unwrap();
    assert_eq!(modem, want);
    let (e_phi, e_psi) = modem.energies();
    assert!((e_phi - 10.0).abs() < 1e-9 && (e_psi - 15.0).abs() < 1e-9);
    let (_, rows, _) = read_csv(&p(&t.root, "net.uwnp.history.csv"));
    assert!(rows.is_empty());
}

#[test]
fn train_writes_history_and_checkpoint() {
    let t = train_small("2", "1");
    let (comment, rows, headers) = read_csv(&p(&t.root, "net.uwnp.history.csv"));
    assert!(comment.starts_with("# config_hash=") && comment.contains("seed=0"));
    assert_eq!(headers.get(0), Some("stage"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].get(0), Some("2"));
    let info = ok(&["inspect", s(&p(&t.root, "net.uwnp"))]);
    assert!(info.contains("checkpoint") && info.contains("step"), "{info}");

    let mismatched = p(&t.root, "paper.uwad");
    ok(&["--profile", "paper", "gen-dataset", "--out", s(&mismatched), "--count", "1"]);
    let out = uwamod(&[
        "train", "--train", s(&mismatched), "--val", s(&p(&t.root, "val.uwad")),
        "--checkpoint", s(&p(&t.root, "x.uwnp")), "--modem", s(&p(&t.root, "x.uwmd")),
        "--e1", "0", "--e2", "0", "--arch", "tiny",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dims"));
}

#[test]
fn eval_rate_rows_match_library() {
    let t = train_small("0", "0");
    let test = p(&t.root, "test.uwad");
    ok(&["gen-dataset", "--out", s(&test), "--count", "6", "--split", "test"]);
    let csv_path = p(&t.root, "rate.csv");
    ok(&[
        "eval-rate", "--ofdm", "--modem", s(&p(&t.root, "learned.uwmd")),
        "--dataset", s(&test), "--snr", "-5,0,5,10,15,20", "--out", s(&csv_path),
    ]);
    let (comment, rows, headers) = read_csv(&csv_path);
    assert!(comment.contains("config_hash="));
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["modem", "snr_db", "avg_rate", "min_rate"]);
    assert_eq!(rows.len(), 12);
    let ds = Dataset::load(&test).unwrap();
    let channels: Vec<_> = ds.pairs.into_iter().map(|p| p.h).collect();
    let ofdm = zp_ofdm_modem(&SystemConfig::desk()).unwrap();
    let direct = rate_sweep(&ofdm, "zp-ofdm", &channels, &[-5.0, 0.0, 5.0, 10.0, 15.0, 20.0]).unwrap();
    for (row, want) in rows.iter().filter(|r| r.get(0) == Some("zp-ofdm")).zip(&direct.rows) {
        assert_eq!(row.get(1).unwrap().parse::<f64>().unwrap(), want.snr_db);
        assert_eq!(row.get(2).unwrap().parse::<f64>().unwrap(), want.avg_rate);
        assert_eq!(row.get(3).unwrap().parse::<f64>().unwrap(), want.min_rate);
    }
    assert_eq!(rows.iter().filter(|r| r.get(0) == Some("learned")).count(), 6);
}

#[test]
fn eval_ber_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "ber.csv");
    let zero = uwamod(&["eval-ber", "--ofdm", "--blocks", "0", "--out", s(&out)]);
    assert!(!zero.status.success());

    ok(&[
        "eval-ber", "--ofdm", "--blocks", "20", "--snr", "0,10", "--a-max", "0.002",
        "--mode", "both", "--out", s(&out),
    ]);
    let (comment, rows, headers) = read_csv(&out);
    assert!(comment.contains("a_max_override=0.002"), "{comment}");
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["modem", "mode", "snr_db", "bits", "errors", "ber", "skipped_blocks"]
    );
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let bits: f64 = r.get(3).unwrap().parse().unwrap();
        let errors: f64 = r.get(4).unwrap().parse().unwrap();
        let ber: f64 = r.get(5).unwrap().parse().unwrap();
        assert_eq!(bits, 20.0 * 2.0 * 10.0);
        assert_eq!(ber, errors / bits);
    }
}

#[test]
fn inspect_reports_and_rejects() {
    let t = train_small("0", "0");
    let modem = p(&t.root, "learned.uwmd");
    let info = ok(&["inspect", s(&modem)]);
    assert!(info.contains("M=16 N=10 M'=24") && info.contains("energy(phi)") && info.contains("energy(psi_h)"));
    let ds_info = ok(&["inspect", s(&p(&t.root, "val.uwad"))]);
    assert!(ds_info.contains("pairs: 4") && ds_info.contains("\"f_c\""));

    let bytes = std::fs::read(&modem).unwrap();
    let cut = p(&t.root, "cut.uwmd");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let out = uwamod(&["inspect", s(&cut)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));

    let junk = p(&t.root, "junk.bin");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let out = uwamod(&["inspect", s(&junk)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}
