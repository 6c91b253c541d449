#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub const BIN: &str = env!("CARGO_BIN_EXE_medmeta");

pub struct Run {
    pub code: i32,
    pub stderr: String,
}

pub fn medmeta(args: &[&str]) -> Run {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    Run { code: out.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Main-effects scenario with one normal covariate.
pub const SCENARIO: &str = r#"{
  "dgp": {
    "alpha0": 0.5, "alpha1": 0.5, "alpha2": [0.3],
    "beta0": -1.0, "beta1": 0.2, "beta2": 0.4, "beta3": [0.5],
    "l_dist": [{"name": "age", "dist": "normal", "mean": 0.0, "sd": 1.0}],
    "sigma_m": 1.0, "sigma_y": 1.0, "n": 400, "seed": 1
  },
  "studies": 4,
  "mcar": 0.2
}
"#;

/// Simulated inputs for every subcommand.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub scenario: PathBuf,
    pub data: PathBuf,
    /// Copy of study s004 with the outcome removed.
    pub xm_study: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("scenario.json");
        std::fs::write(&scenario, SCENARIO).unwrap();
        let data = dir.path().join("data");
        let r = medmeta(&["simulate", "--config", &s(&scenario), "--data-dir", &s(&data), "--seed", "5", "--out", &s(&dir.path().join("sim.json"))]);
        assert_eq!(r.code, 0, "{}", r.stderr);

        let xm_study = dir.path().join("j1.csv");
        let mut rdr = csv::Reader::from_path(data.join("s004.csv")).unwrap();
        let mut w = csv::Writer::from_path(&xm_study).unwrap();
        w.write_record(rdr.headers().unwrap()).unwrap();
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let row: Vec<&str> = rec.iter().enumerate().map(|(i, v)| if i == 2 { "" } else { v }).collect();
            w.write_record(&row).unwrap();
        }
        w.flush().unwrap();
        Self { dir, scenario, data, xm_study }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn study(&self, id: &str) -> String {
        s(&self.data.join(format!("{id}.csv")))
    }

    /// Arguments of every subcommand, without `--out`.
    pub fn invocations(&self) -> Vec<(&'static str, Vec<String>)> {
        let agg = s(&self.data.join("aggregates.csv"));
        let cor = s(&self.data.join("correlations.csv"));
        let v = |a: &[&str]| a.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        vec![
            ("masem-param", v(&["masem-param", "--in", &agg])),
            ("masem-corr", v(&["masem-corr", "--in", &cor])),
            ("ml", v(&["ml", "--in", &agg, "--bootstrap", "200", "--seed", "7"])),
            (
                "ipd-transport",
                v(&["ipd-transport", "--source", &self.study("s001"), "--source", &self.study("s002"), "--target", &self.study("s003"), "--bootstrap", "100", "--seed", "3"]),
            ),
            (
                "xm-integrate",
                v(&["xm-integrate", "--outcome", &self.study("s001"), "--outcome", &self.study("s002"), "--mediator", &s(&self.xm_study), "--bootstrap", "100", "--seed", "3"]),
            ),
            ("simulate", v(&["simulate", "--config", &s(&self.scenario), "--data-dir", &s(&self.path("resim")), "--seed", "9"])),
            ("demo-appendix1", v(&["demo-appendix1", "--seed", "11"])),
        ]
    }

    /// Runs a subcommand writing its report to `out`; returns the report bytes.
    pub fn report(&self, args: &[String], out: &Path) -> Vec<u8> {
        let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = s(out);
        a.extend(["--out", &o]);
        let r = medmeta(&a);
        assert_eq!(r.code, 0, "{:?}: {}", args, r.stderr);
        std::fs::read(out).unwrap()
    }
}
