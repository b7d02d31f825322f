use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn duopoly() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duopoly"));
    cmd.env_remove("DUOPOLY_OUT_DIR").env_remove("DUOPOLY_URL");
    cmd
}

fn run(args: &[&str]) -> Output {
    duopoly().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("simulate"));
    assert_eq!(code(&run(&["simulate", "--help"])), 0);
    assert_eq!(code(&run(&["solve", "--bogus"])), 2);
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["solve", "--treatment", "XX_YY"])), 2);
    assert_eq!(code(&run(&["solve"])), 2);
    assert_eq!(code(&run(&["simulate", "--treatment", "HM_LU", "--subjects", "6"])), 2);
    assert_eq!(code(&run(&["simulate", "--treatment", "HM_LU", "--policy", "focal:7"])), 2);
}

#[test]
fn solve_prints_the_headline_numbers() {
    let o = run(&["solve", "--treatment", "HM_LU"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("threshold price     7.40699"), "{text}");
    assert!(text.contains("405.0000"), "{text}");
    assert!(text.contains("8.931"), "{text}");
    assert!(text.contains("first grid price    7.5"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("lm.cfg");
    std::fs::write(&file, "c=9\nr=12\nd_H=100\nd_L=50\nx=40\n").unwrap();
    let o = run(&["solve", "--params", file.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("9.94066"), "{}", stdout(&o));
    assert_eq!(code(&run(&["solve", "--params", "/nonexistent/p.cfg"])), 3);
}

#[test]
fn outputs_are_never_clobbered_silently() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.tsv");
    let p = path.to_str().unwrap();
    let o = run(&["table", "--format", "tsv", "--out", p]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("HM_HU"));
    let first = std::fs::read_to_string(&path).unwrap();
    assert!(first.starts_with("treatment\tbranch"));
    assert_eq!(code(&run(&["table", "--out", p])), 3);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), first);
    assert_eq!(code(&run(&["table", "--out", p, "--force"])), 0);
    assert_ne!(std::fs::read_to_string(&path).unwrap(), first);

    // relative paths resolve under the output directory variable
    let o = duopoly()
        .env("DUOPOLY_OUT_DIR", dir.path())
        .args(["solve", "-t", "LM_LU", "--out", "solve.json"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    assert_eq!(v["summary"]["value"], 105.0);
}

#[test]
fn verify_all_passes() {
    let o = run(&["verify", "--all"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("all checks passed"));
    let o = run(&["verify", "--treatment", "LM_HU"]);
    assert_eq!(code(&o), 0);
    assert!(!stdout(&o).contains("HM_LU"));
}

fn simulate_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate", "--treatment", "LM_HU", "--subjects", "24", "--rounds", "50", "--seed", "7", "--out",
    ];
    args.push(dir.to_str().unwrap());
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simulate_is_deterministic_and_analyzable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = simulate_into(a.path(), &[]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(code(&simulate_into(b.path(), &[])), 0);
    for name in ["LM_HU_seed7.csv", "LM_HU_seed7.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    assert_eq!(stdout(&oa), stdout(&simulate_into(b.path(), &["--force"])));
    assert_eq!(code(&simulate_into(b.path(), &[])), 3);

    let csv = a.path().join("LM_HU_seed7.csv");
    let o = run(&["analyze", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("Treatment LM_HU"), "{text}");
    let oj = run(&["analyze", a.path().join("LM_HU_seed7.json").to_str().unwrap()]);
    assert_eq!(stdout(&oj), text);

    // a corrupted row is reported by its position
    let body = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = body.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    cells[11] = "99999".into();
    lines[5] = cells.join(",");
    let bad = a.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = run(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 5"), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["analyze", "/nonexistent.csv"])), 3);
}

#[test]
fn simulate_uses_the_output_directory_variable() {
    let dir = tempfile::tempdir().unwrap();
    let o = duopoly()
        .env("DUOPOLY_OUT_DIR", dir.path())
        .args(["simulate", "-t", "HM_HU", "--subjects", "8", "--rounds", "5", "--policy", "focal:0.5", "--policy", "ptc:0.3:1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("HM_HU_seed1.csv").exists());
}

#[test]
fn play_drives_a_live_session_from_stdin() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(duopoly_service::serve(listener, duopoly_service::AppState::default(), std::future::pending()));

    let mut child = duopoly()
        .args(["play", "--url", &format!("http://{addr}"), "--rounds", "2", "--display", "0", "--poll-ms", "20", "--seed", "3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // an off-grid price and a non-number are refused, then valid input goes through
    child.stdin.take().unwrap().write_all(b"10.05\nabc\n9.9\n85\n12\n60\n").unwrap();
    let o = child.wait_with_output().unwrap();
    let text = stdout(&o);
    assert_eq!(code(&o), 0, "{text}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(text.contains("OffGrid"), "{text}");
    assert!(text.contains("not a number"), "{text}");
    assert!(text.contains("round   1: price   9.9"), "{text}");
    assert!(text.contains("order  85"), "{text}");
    assert!(text.contains("round   2: price    12"), "{text}");
    assert!(text.contains("session over"), "{text}");
}
