use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

fn harmogen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmogen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstderr: {}",
        o.status,
        String::from_utf8_lossy(&o.stderr)
    );
}

const CONFIG: &str = r#"
collection_size = 4

[ga1]
iterations = 60
population = 8
steps = 32

[ga2]
iterations = 30
population = 8
steps = 32

[train]
hidden = 4
epochs = 20
learning_rate = 0.01
"#;

fn with<'a>(args: &[&'a str]) -> Vec<&'a str> {
    [&["-c", "harmogen.toml"][..], args].concat()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    for entry in fs::read_dir(fixtures()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, corpus.join(p.file_name().unwrap())).unwrap();
    }
    fs::write(dir.path().join("harmogen.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = setup();
    let d = dir.path();

    let o = harmogen(d, &with(&["index"]));
    assert_ok(&o);
    assert!(stdout(&o).starts_with("pieces=6 "), "{}", stdout(&o));
    assert!(d.join("work/index.txt").is_file());
    assert!(d.join("work/note_histogram.csv").is_file());

    let o = harmogen(d, &with(&["ga1"]));
    assert_ok(&o);
    let manifest = fs::read_to_string(d.join("work/collection/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);

    let mut ratings = String::from("piece_id,group,rater_id,score\n");
    for (i, line) in manifest.lines().skip(1).enumerate() {
        let id = line.split(',').next().unwrap();
        ratings.push_str(&format!(
            "{id},expert,e1,{}\n{id},regular,r1,{}\n",
            30 + 10 * i,
            80 - 10 * i
        ));
    }
    fs::write(d.join("ratings.csv"), ratings).unwrap();
    let o = harmogen(d, &with(&["ratings-import", "ratings.csv"]));
    assert_ok(&o);
    assert!(stdout(&o).contains("piece-000,1,1"));

    for group in ["expert", "regular"] {
        let o = harmogen(d, &with(&["train", "--group", group]));
        assert_ok(&o);
        assert!(stdout(&o).contains("epochs=20"), "{}", stdout(&o));
        assert!(d.join(format!("work/models/{group}.ckpt")).is_file());
        assert!(d.join(format!("work/models/{group}.loss.csv")).is_file());
    }

    let o = harmogen(d, &with(&["ga2"]));
    assert_ok(&o);
    assert!(stdout(&o).starts_with("fitness="));
    assert!(d.join("work/ga2/trace.csv").is_file());

    let o = harmogen(
        d,
        &with(&[
            "score",
            "work/ga2/best.abc",
            "--expert",
            "work/models/expert.ckpt",
            "--regular",
            "work/models/regular.ckpt",
        ]),
    );
    assert_ok(&o);
    let report = stdout(&o);
    assert!(report.contains("composite="), "{report}");

    let o = harmogen(d, &with(&["convert", "work/ga2/best.abc", "best.csv"]));
    assert_ok(&o);
    let o = harmogen(d, &with(&["convert", "best.csv", "back.abc", "--channels", "2"]));
    assert_ok(&o);
    // Voices are reassigned by pitch on the way back, but the roll is unchanged.
    let o = harmogen(d, &with(&["convert", "back.abc", "back.csv"]));
    assert_ok(&o);
    assert_eq!(
        fs::read(d.join("best.csv")).unwrap(),
        fs::read(d.join("back.csv")).unwrap()
    );
}

#[test]
fn ga1_output_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    assert_ok(&harmogen(d, &["-c", "harmogen.toml", "index"]));
    let run = |out: &str| {
        let o = harmogen(
            d,
            &["-c", "harmogen.toml", "--set", "collection_size=2", "ga1", "--out", out],
        );
        assert_ok(&o);
        stdout(&o).replace(&format!("{out}/"), "OUT/")
    };
    assert_eq!(run("run_a"), run("run_b"));
    for f in ["piece-000.abc", "piece-001.csv", "manifest.csv", "breakdowns.csv"] {
        assert_eq!(
            fs::read(d.join("run_a").join(f)).unwrap(),
            fs::read(d.join("run_b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = setup();
    let d = dir.path();
    let o = harmogen(d, &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let o = harmogen(d, &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    let o = harmogen(d, &["--set", "ga1.population=1", "index"]);
    assert_eq!(o.status.code(), Some(1));
    let o = harmogen(d, &["--set", "bogus=3", "index"]);
    assert_eq!(o.status.code(), Some(1));
    // Missing index file is a data error.
    let o = harmogen(d, &["ga1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = harmogen(d, &["index", "--corpus", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn held_lock_refuses_a_second_writer() {
    let dir = setup();
    let d = dir.path();
    fs::create_dir_all(d.join("work")).unwrap();
    fs::write(d.join("work/.harmogen.lock"), "").unwrap();
    let o = harmogen(d, &["index"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lock"));
}
