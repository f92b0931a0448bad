use std::path::Path;
use std::process::Command;

use ycda::model::load_tensors;
use ycda_cli::commands::{reflect_pad, toy_report, TrainToyArgs};
use ycda_cli::ppm::{decode_ppm, load_ppm, PpmError};
use ycda_cli::stats::CSV_HEADER;

fn ycda(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ycda"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gradcheck_exit_codes() {
    let (code, out, _) = ycda(&["gradcheck", "--seed", "0"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("PASS"));

    let (code, _, err) = ycda(&["gradcheck", "--reduction", "5"]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = ycda(&["gradcheck", "--eps", "0"]);
    assert_eq!(code, 2);
    let (code, _, _) = ycda(&["gradcheck", "--no-such-flag"]);
    assert_eq!(code, 2);
}

#[test]
fn gradcheck_cancellation_regime_degrades() {
    // at eps 1e-12 the difference quotient is dominated by rounding, not by the analytic side
    let (code, out, err) = ycda(&["gradcheck", "--eps", "1e-12"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("gradient check failed"));
    let last = out.lines().find(|l| l.starts_with("overall max")).unwrap();
    let value: f64 = last.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(value > 1e-3, "{last}");
}

#[test]
fn forward_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let weights = d.join("w.ycda");
    let (code, _, err) = ycda(&["init-weights", "--seed", "3", "--out", p(&weights)]);
    assert_eq!(code, 0, "{err}");
    assert!(d.join("w.manifest.json").exists());
    let (code, _, err) = ycda(&[
        "synth", "--size", "21", "--radius", "4", "--out", p(&d.join("img")),
    ]);
    assert_eq!(code, 0, "{err}");
    let img = d.join("img/000_camouflaged.ppm");

    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out = d.join(run);
        let (code, _, err) = ycda(&[
            "forward", "--image", p(&img), "--weights", p(&weights), "--out", p(&out),
        ]);
        assert_eq!(code, 0, "{err}");
        runs.push((
            std::fs::read(out.join("features.ycda")).unwrap(),
            std::fs::read_to_string(out.join("alpha.txt")).unwrap(),
        ));
    }
    assert_eq!(runs[0], runs[1]);

    let listing = &runs[0].1;
    assert!(listing.starts_with("# input 21x21, reflect-padded to 22x22\n"));
    let alphas: Vec<f64> = listing
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('['))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(alphas.len(), 24);
    assert!(alphas.iter().all(|&a| a > 0.0 && a < 1.0));
    let groups: Vec<&str> = listing.lines().filter(|l| l.starts_with('[')).collect();
    assert_eq!(groups, ["[Y]", "[Cb]", "[Cr]"]);

    let dump = load_tensors(&d.join("a/features.ycda")).unwrap();
    let names: Vec<&str> = dump.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["features", "alpha", "input_extent"]);
    assert_eq!(dump[0].1.shape(), &[24, 11, 11]);
    assert_eq!(dump[2].1.data(), &[21.0, 21.0, 22.0, 22.0]);
}

#[test]
fn zero_mlp_weights_give_half_alphas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let weights = d.join("zero.ycda");
    assert_eq!(
        ycda(&["init-weights", "--zero-mlp", "--out", p(&weights)]).0,
        0
    );
    ycda(&["synth", "--size", "16", "--radius", "3", "--out", p(&d.join("img"))]);
    let (code, _, err) = ycda(&[
        "forward",
        "--image",
        p(&d.join("img/000_salient.ppm")),
        "--weights",
        p(&weights),
        "--out",
        p(&d.join("f")),
    ]);
    assert_eq!(code, 0, "{err}");
    let listing = std::fs::read_to_string(d.join("f/alpha.txt")).unwrap();
    let values: Vec<&str> = listing
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('['))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(values.len(), 24);
    assert!(values.iter().all(|v| *v == "0.500000000000"));
}

#[test]
fn forward_reports_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.ppm"), b"P5\n1 1\n255\n\0").unwrap();
    std::fs::write(d.join("w.ycda"), b"nope").unwrap();
    let (code, _, err) = ycda(&[
        "forward",
        "--image",
        p(&d.join("bad.ppm")),
        "--weights",
        p(&d.join("w.ycda")),
        "--out",
        p(&d.join("o")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("not a binary PPM"), "{err}");
}

#[test]
fn stats_csv_is_deterministic_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ycda(&["synth", "--pairs", "2", "--seed", "4", "--out", p(d)]);
    let files = [
        d.join("000_salient.ppm"),
        d.join("000_camouflaged.ppm"),
        d.join("001_salient.ppm"),
    ];
    let mut outputs = Vec::new();
    for name in ["s1.csv", "s2.csv"] {
        let out = d.join(name);
        let (code, _, err) = ycda(&[
            "stats",
            p(&files[0]),
            p(&files[1]),
            p(&files[2]),
            "--labels",
            "salient,camouflaged,none",
            "--synth-pairs",
            "1",
            "--out",
            p(&out),
        ]);
        assert_eq!(code, 0, "{err}");
        outputs.push(std::fs::read_to_string(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let lines: Vec<&str> = outputs[0].lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("000_salient,salient,"));
    assert!(lines[2].starts_with("000_camouflaged,camouflaged,"));
    assert!(lines[3].starts_with("001_salient,,"));
    assert!(lines[4].starts_with("synth000_salient,salient,"));
    assert!(lines[6].starts_with("mean_salient,"));
    assert!(lines[7].starts_with("mean_camouflaged,"));
    for l in &lines[1..] {
        let fields: Vec<&str> = l.split(',').collect();
        assert_eq!(fields.len(), 8);
        for v in &fields[5..] {
            assert!(v.parse::<f64>().unwrap() >= 0.0);
        }
    }

    let (code, _, _) = ycda(&["stats", p(&files[0]), "--labels", "salient,camouflaged"]);
    assert_eq!(code, 2);
    let (code, _, _) = ycda(&["stats"]);
    assert_eq!(code, 2);
}

#[test]
fn quantized_pair_keeps_chroma_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ycda(&["synth", "--out", p(d)]);
    let (code, out, _) = ycda(&[
        "stats",
        p(&d.join("000_salient.ppm")),
        p(&d.join("000_camouflaged.ppm")),
        "--labels",
        "salient,camouflaged",
    ]);
    assert_eq!(code, 0);
    let rows: Vec<Vec<f64>> = out
        .lines()
        .skip(1)
        .take(2)
        .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    for c in 0..3 {
        assert!((rows[0][c] - rows[1][c]).abs() < 0.01);
    }
    assert!((rows[0][3] - rows[1][3]).abs() / rows[0][3] < 0.1);
    assert!(rows[1][4] <= 0.5 * rows[0][4]);
    assert!(rows[1][5] <= 0.5 * rows[0][5]);
}

#[test]
fn cost_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cost.json");
    let (code, text, _) = ycda(&["cost", "--out", p(&out)]);
    assert_eq!(code, 0);
    assert!(text.contains("not modeled"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["ycda"]["params"], 1734);
    assert_eq!(v["baseline"]["params"], 1792);
    assert_eq!(v["ycda"]["output_channels"], 24);
    assert_eq!(v["baseline"]["output_channels"], 64);
    assert_eq!(ycda(&["cost", "--height", "641"]).0, 2);
}

#[test]
fn train_toy_zero_steps() {
    let args = TrainToyArgs {
        steps: 0,
        pairs: 4,
        ..TrainToyArgs::default()
    };
    let (report, _) = toy_report(&args).unwrap();
    assert_eq!(report.loss_trace.len(), 1);
    assert_eq!(report.train_images, 6);
    assert_eq!(report.test_images, 2);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let (code, _, err) = ycda(&[
        "train-toy", "--steps", "2", "--pairs", "4", "--out", p(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["loss_trace"].as_array().unwrap().len(), 3);
    assert!(v["summary"].as_str().unwrap().contains("alpha(Y)"));
    assert_eq!(ycda(&["train-toy", "--momentum", "1.0"]).0, 2);
}

#[test]
fn reflect_padding_mirrors_without_edge_repeat() {
    let bytes: Vec<u8> = (0..9).flat_map(|i| [i * 20, 0, 0]).collect();
    let mut file = b"P6\n3 3\n255\n".to_vec();
    file.extend(bytes);
    let img = decode_ppm(&file).unwrap();
    let padded = reflect_pad(&img, 2);
    assert_eq!(padded.height(), 4);
    let row = |y: usize| -> Vec<u8> {
        (0..4)
            .map(|x| (padded.pixels().get(&[0, y, x]) * 255.0).round() as u8)
            .collect()
    };
    assert_eq!(row(0), [0, 20, 40, 20]);
    assert_eq!(row(3), [60, 80, 100, 80]);
}

#[test]
fn ppm_negative_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[u8]); 8] = [
        ("ascii.ppm", b"P3\n1 1\n255\n0 0 0\n"),
        ("empty.ppm", b""),
        ("gray.ppm", b"P5\n1 1\n255\n\0"),
        ("no_height.ppm", b"P6\n4\n"),
        ("junk_width.ppm", b"P6\n4x 4\n255\n"),
        ("deep.ppm", b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
        ("short.ppm", b"P6\n2 2\n255\n\x01\x02\x03"),
        ("zero.ppm", b"P6\n0 2\n255\n"),
    ];
    let mut kinds = Vec::new();
    for (name, bytes) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        let kind = match load_ppm(&path) {
            Err(PpmError::BadMagic(_)) => "magic",
            Err(PpmError::MalformedHeader(_)) => "header",
            Err(PpmError::UnsupportedMaxval(_)) => "maxval",
            Err(PpmError::Truncated { .. }) => "truncated",
            Err(PpmError::Io { .. }) => "io",
            Ok(_) => panic!("{name} accepted"),
        };
        kinds.push(kind);
    }
    assert_eq!(
        kinds,
        ["magic", "magic", "magic", "header", "header", "maxval", "truncated", "header"]
    );
    assert!(matches!(
        load_ppm(&dir.path().join("absent.ppm")),
        Err(PpmError::Io { .. })
    ));
}
