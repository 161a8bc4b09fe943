use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_careledger"));
    c.env_remove("CARELEDGER_SEED");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn run_into(script: &str, dir: &Path) {
    let o = run(&["run", fixture(script).to_str().unwrap(), "--seed", "42", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn find(hay: &[u8], needle: &[u8]) -> usize {
    hay.windows(needle.len()).position(|w| w == needle).unwrap()
}

#[test]
fn exit_code_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    run_into("case1.scn", &d.join("c1"));
    run_into("case1_emergency.scn", &d.join("em"));
    let ledger = d.join("c1/ledger-hospital.bin");
    let mut tampered = fs::read(&ledger).unwrap();
    let at = find(&tampered, b"nurse_ann");
    tampered[at] ^= 0x01;
    fs::write(d.join("tampered.bin"), &tampered).unwrap();
    fs::write(d.join("empty.bin"), b"").unwrap();
    let original = fs::read(&ledger).unwrap();
    fs::write(d.join("truncated.bin"), &original[..original.len() - 7]).unwrap();
    fs::write(d.join("bad.scn"), "org add a\nfrobnicate now\n").unwrap();
    fs::write(d.join("ghost.scn"), "org add a\npractitioner add dr nowhere\n").unwrap();

    let p = |rel: &str| d.join(rel).to_string_lossy().into_owned();
    let case1 = fixture("case1.scn").to_string_lossy().into_owned();
    let case2 = fixture("case2.scn").to_string_lossy().into_owned();
    let out = p("out");
    let table: Vec<(Vec<String>, i32)> = vec![
        (vec!["run".into(), case1.clone(), "--seed".into(), "42".into(), "--out".into(), out], 0),
        (vec!["run".into(), p("missing.scn")], 2),
        (vec!["run".into(), p("bad.scn")], 2),
        (vec!["run".into(), p("ghost.scn")], 1),
        (vec!["verify".into(), ledger.to_string_lossy().into_owned()], 0),
        (vec!["verify".into(), p("tampered.bin")], 1),
        (vec!["verify".into(), p("empty.bin")], 2),
        (vec!["verify".into(), p("truncated.bin")], 2),
        (
            vec!["audit".into(), p("em/ledger-hospital.bin"), "--from".into(), "100".into(), "--to".into(), "50".into()],
            2,
        ),
        (vec!["audit".into(), p("em/ledger-hospital.bin"), "--action".into(), "EmergencyAccess".into()], 0),
        (
            vec![
                "timeline".into(),
                case1,
                "--practitioner".into(),
                "nurse_ann".into(),
                "--at".into(),
                "700000".into(),
                "--session".into(),
                "s1".into(),
            ],
            1,
        ),
        (
            vec!["dashboard".into(), case2, "--researcher".into(), "r_vos".into(), "--study".into(), "sleep".into()],
            0,
        ),
    ];
    assert_eq!(table.len(), 12);
    for (args, code) in &table {
        let o = bin().args(args).output().unwrap();
        assert_eq!(o.status.code(), Some(*code), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["audit", "x.bin", "--from", "abc"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn verify_accepts_every_fixture_run() {
    let tmp = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(fixture("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|x| x != "scn") {
            continue;
        }
        let dir = tmp.path().join(path.file_stem().unwrap());
        run_into(path.file_name().unwrap().to_str().unwrap(), &dir);
        for ledger in fs::read_dir(&dir).unwrap() {
            let ledger = ledger.unwrap().path();
            if ledger.extension().is_some_and(|x| x == "bin") {
                let o = run(&["verify", ledger.to_str().unwrap()]);
                assert!(o.status.success(), "{}", ledger.display());
                assert!(stdout(&o).starts_with("ok\t"));
            }
        }
    }
}

#[test]
fn tampered_ledger_reports_height_and_rule() {
    let tmp = tempfile::tempdir().unwrap();
    run_into("case1.scn", tmp.path());
    let path = tmp.path().join("ledger-homecare.bin");
    let mut bytes = fs::read(&path).unwrap();
    let at = find(&bytes, b"nurse_ann");
    bytes[at + 1] ^= 0x20;
    fs::write(&path, &bytes).unwrap();
    let o = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = stdout(&o);
    assert!(line.starts_with("violation\theight "), "{line}");
}

#[test]
fn timeline_orders_sources_by_time() {
    let o = run(&["timeline", fixture("case1.scn").to_str().unwrap(), "--practitioner", "nurse_ann"]);
    assert!(o.status.success());
    let times: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split('\t').take(2).collect::<Vec<_>>().join("@"))
        .collect();
    assert_eq!(times, ["10@hospital", "20@pharmacy", "30@hospital"]);
    let windowed = run(&[
        "timeline",
        fixture("case1.scn").to_str().unwrap(),
        "--practitioner",
        "nurse_ann",
        "--from",
        "15",
        "--to",
        "30",
    ]);
    assert_eq!(stdout(&windowed).lines().count(), 2);
}

#[test]
fn dashboard_counts_attempts_and_mistakes() {
    let script = fixture("case2.scn");
    let args = [
        "dashboard",
        script.to_str().unwrap(),
        "--researcher",
        "r_vos",
        "--study",
        "mobility",
    ];
    let a = run(&args);
    assert!(a.status.success());
    let text = stdout(&a);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["participant", "state", "attempts", "mistakes", "struggles", "signed_at"]);
    let pa = rows.iter().find(|r| r[0] == "pa").unwrap();
    assert_eq!((pa[1], pa[2], pa[3]), ("signed", "3", "3"));
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn audit_exports_every_transaction_and_filters() {
    let tmp = tempfile::tempdir().unwrap();
    run_into("case1_emergency.scn", tmp.path());
    let ledger = tmp.path().join("ledger-homecare.bin");
    let all = stdout(&run(&["audit", ledger.to_str().unwrap()]));
    let ids: Vec<String> = all.lines().map(tx_id_of).collect();
    let unique: std::collections::BTreeSet<&String> = ids.iter().collect();
    assert_eq!(unique.len(), ids.len());
    let flagged = all.lines().filter(|l| l.contains("\"action\":\"EmergencyAccess\"")).count();
    let filtered = stdout(&run(&["audit", ledger.to_str().unwrap(), "--action", "EmergencyAccess"]));
    assert_eq!(filtered.lines().count(), flagged);
    assert_eq!(flagged, 1);
    let by_subject = stdout(&run(&[
        "audit",
        ledger.to_str().unwrap(),
        "--subject",
        "p002",
        "--action",
        "AccessCompleted",
    ]));
    assert_eq!(by_subject.lines().count(), 3);
}

fn tx_id_of(line: &str) -> String {
    let start = line.find("\"tx_id\":\"").unwrap() + 9;
    line[start..start + 64].to_string()
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let script = fixture("case1.scn");
    let flag = tmp.path().join("flag");
    let env = tmp.path().join("env");
    let o = run(&["run", script.to_str().unwrap(), "--seed", "7", "--out", flag.to_str().unwrap()]);
    assert!(o.status.success());
    let o = bin()
        .env("CARELEDGER_SEED", "7")
        .args(["run", script.to_str().unwrap(), "--out", env.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(
        fs::read(flag.join("trace.tsv")).unwrap(),
        fs::read(env.join("trace.tsv")).unwrap()
    );
}

#[test]
fn shred_check_passes_on_fixtures() {
    for scn in ["case1_revoke.scn", "case1.scn", "case2.scn"] {
        let o = run(&[
            "shred-check",
            fixture(scn).to_str().unwrap(),
            "--dictionary",
            fixture("dictionary.txt").to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{scn}: {}", stdout(&o));
    }
}

#[test]
fn shred_check_fails_when_a_dictionary_word_is_on_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dict = tmp.path().join("dict.txt");
    fs::write(&dict, "nurse_ann\n").unwrap();
    let o = run(&[
        "shred-check",
        fixture("case1.scn").to_str().unwrap(),
        "--dictionary",
        dict.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("leak\t")), "{text}");
    assert!(text.lines().last().unwrap().starts_with("fail\t"));
}
