//! Candidate sweeps, scoring and the selection report.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lorp::baselines::{
    aic_bic, d_eff_trace, minimize_bms_over_alpha, BaselineScores, NoisePrecision, PriorKind,
};
use lorp::loss_rank::{argmin_first, log_unit_ball_volume};
use lorp::optim::ScanSettings;
use lorp::projective::projective_loss_rank;
use lorp::regressors::polynomial_design;
use lorp::{
    loss_rank, AlphaChoice, Dataset, HatMatrix, LossRankOptions, PenaltyKind, RegressorSpec,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::{dataset_digest, gen_synthetic, load_csv, SynthSpec};
use crate::error::{CliError, Result};
use crate::sweep::FamilySweep;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, target: String },
    Synthetic { spec: SynthSpec, seed: u64 },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, target } => Ok(load_csv(path, target)?.data),
            DataSource::Synthetic { spec, seed } => gen_synthetic(spec, *seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BaselineToggles {
    pub aic: bool,
    pub bic: bool,
    pub bms: bool,
    pub trace: bool,
}

impl Default for BaselineToggles {
    fn default() -> Self {
        Self {
            aic: true,
            bic: true,
            bms: true,
            trace: true,
        }
    }
}

impl BaselineToggles {
    pub fn none() -> Self {
        Self {
            aic: false,
            bic: false,
            bms: false,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub families: Vec<FamilySweep>,
    pub lorp: LossRankOptions,
    pub baselines: BaselineToggles,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(CliError::Usage("at least one --family is required".into()));
        }
        if let Some(f) = self.families.iter().find(|f| f.specs.is_empty()) {
            return Err(CliError::Usage(format!("family sweep '{f}' is empty")));
        }
        if let AlphaChoice::Optimize {
            lo,
            hi,
            grid_points,
            rel_tol,
        } = self.lorp.alpha
        {
            ScanSettings {
                lo,
                hi,
                grid_points,
                rel_tol,
            }
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub index: usize,
    /// Position of the family sweep this candidate came from.
    pub sweep: usize,
    pub family: &'static str,
    pub spec: String,
    pub param: f64,
    pub ok: bool,
    pub method: Option<Method>,
    pub lr: Option<f64>,
    pub alpha_star: Option<f64>,
    pub flat: Option<bool>,
    pub loss: Option<f64>,
    pub logdet: Option<f64>,
    pub n_kept: Option<usize>,
    pub baselines: BaselineScores,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Winner {
    pub index: usize,
    pub spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Winners {
    pub lorp: Option<Winner>,
    pub aic: Option<Winner>,
    pub bic: Option<Winner>,
    pub bms: Option<Winner>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetDigest {
    pub n: usize,
    pub m: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

/// Everything in the report that is a function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBody {
    pub schema: u32,
    pub tool: Tool,
    pub dataset: DatasetDigest,
    pub config: RunConfig,
    pub candidates: Vec<CandidateRecord>,
    pub winners: Winners,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    #[serde(flatten)]
    pub body: ReportBody,
    /// SHA-256 of the serialized body; `generated_at` is not covered.
    pub content_digest: String,
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
}

impl SelectionReport {
    pub fn all_failed(&self) -> bool {
        self.body.winners.lorp.is_none()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn closed_form_applies(spec: &RegressorSpec, opts: &LossRankOptions) -> Option<(f64, f64)> {
    if !spec.is_projective() || opts.penalty != PenaltyKind::ResponseNorm || opts.filter_generic {
        return None;
    }
    match opts.alpha {
        AlphaChoice::Optimize { lo, hi, .. } => Some((lo, hi)),
        AlphaChoice::Fixed { .. } => None,
    }
}

fn score_lorp(
    spec: &RegressorSpec,
    hat: &HatMatrix,
    y: &nalgebra::DVector<f64>,
    opts: &LossRankOptions,
    rec: &mut CandidateRecord,
) -> lorp::Result<()> {
    if let Some((lo, hi)) = closed_form_applies(spec, opts) {
        if let Ok(p) = projective_loss_rank(hat, y) {
            if (lo..=hi).contains(&p.alpha_min) {
                let n = hat.n() as f64;
                let a = p.alpha_min;
                let vn = if opts.include_vn {
                    log_unit_ball_volume(hat.n())
                } else {
                    0.0
                };
                rec.method = Some(Method::ClosedForm);
                rec.lr = Some(p.lr + vn);
                rec.alpha_star = Some(a);
                rec.flat = Some(false);
                rec.loss = Some(y.norm_squared() * (p.rho + a));
                rec.logdet = Some(p.d * a.ln() + (n - p.d) * a.ln_1p());
                rec.n_kept = Some(hat.n());
                return Ok(());
            }
        }
    }
    let r = loss_rank(hat, y, opts)?;
    rec.method = Some(Method::Numeric);
    rec.lr = Some(r.lr);
    rec.alpha_star = Some(r.alpha_star);
    rec.flat = Some(r.flat_objective);
    rec.loss = Some(r.loss_at_alpha);
    rec.logdet = Some(r.logdet_at_alpha);
    rec.n_kept = Some(r.n_kept);
    Ok(())
}

fn score_baselines(
    spec: &RegressorSpec,
    hat: &HatMatrix,
    data: &Dataset,
    toggles: &BaselineToggles,
) -> BaselineScores {
    let y = data.y();
    let mut out = BaselineScores::default();
    let tr = d_eff_trace(hat);
    if toggles.trace {
        out.d_eff_trace = Some(tr);
    }
    if toggles.aic || toggles.bic {
        let rss = (y - hat.fitted(y)).norm_squared();
        if let Ok(ic) = aic_bic(rss, tr, data.n()) {
            out.aic = toggles.aic.then_some(ic.aic);
            out.bic = toggles.bic.then_some(ic.bic);
        }
    }
    if let (RegressorSpec::Polynomial { d }, 1) = (spec, data.m()) {
        if toggles.bms || toggles.trace {
            let x: Vec<f64> = data.x().column(0).iter().copied().collect();
            let fit = polynomial_design(&x, *d).and_then(|phi| {
                minimize_bms_over_alpha(
                    &phi,
                    y,
                    NoisePrecision::Auto,
                    PriorKind::Identity,
                    &ScanSettings::default(),
                )
            });
            if let Ok(opt) = fit {
                if toggles.bms {
                    out.bms_neg_log_evidence = Some(opt.evidence.neg_log_evidence);
                }
                if toggles.trace {
                    out.d_eff_mackay = Some(opt.evidence.trace_m);
                }
            }
        }
    }
    out
}

fn score_candidate(
    index: usize,
    sweep: usize,
    family: &'static str,
    spec: &RegressorSpec,
    data: &Dataset,
    config: &RunConfig,
) -> CandidateRecord {
    let mut rec = CandidateRecord {
        index,
        sweep,
        family,
        spec: spec.to_string(),
        param: FamilySweep::param_value(spec),
        ok: false,
        method: None,
        lr: None,
        alpha_star: None,
        flat: None,
        loss: None,
        logdet: None,
        n_kept: None,
        baselines: BaselineScores::default(),
        error: None,
    };
    let hat = match spec.build(data) {
        Ok(h) => h,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    match score_lorp(spec, &hat, data.y(), &config.lorp, &mut rec) {
        Ok(()) if rec.lr.is_some_and(f64::is_finite) => rec.ok = true,
        Ok(()) => rec.error = Some(format!("loss rank is not finite: {:?}", rec.lr)),
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.baselines = score_baselines(spec, &hat, data, &config.baselines);
    rec
}

fn winner<F>(records: &[CandidateRecord], score: F) -> Option<Winner>
where
    F: Fn(&CandidateRecord) -> Option<f64>,
{
    argmin_first(records.iter().map(|r| score(r).filter(|v| v.is_finite()))).map(|i| Winner {
        index: i,
        spec: records[i].spec.clone(),
    })
}

fn digest_of(body: &ReportBody) -> String {
    let bytes = serde_json::to_vec(body).expect("report serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Builds and scores every swept candidate and assembles the report.
///
/// Candidates are scored in parallel but recorded in sweep order. A report
/// where every candidate failed is still returned; check
/// [`SelectionReport::all_failed`].
pub fn run_selection(config: &RunConfig) -> Result<SelectionReport> {
    config.validate()?;
    let data = config.data.load()?;
    let jobs: Vec<(usize, usize, &'static str, &RegressorSpec)> = config
        .families
        .iter()
        .enumerate()
        .flat_map(|(s, f)| f.specs.iter().map(move |spec| (s, f.family.name(), spec)))
        .enumerate()
        .map(|(i, (s, fam, spec))| (i, s, fam, spec))
        .collect();
    let candidates: Vec<CandidateRecord> = jobs
        .par_iter()
        .map(|&(i, s, fam, spec)| score_candidate(i, s, fam, spec, &data, config))
        .collect();

    let winners = Winners {
        lorp: winner(&candidates, |r| if r.ok { r.lr } else { None }),
        aic: winner(&candidates, |r| r.baselines.aic),
        bic: winner(&candidates, |r| r.baselines.bic),
        bms: winner(&candidates, |r| r.baselines.bms_neg_log_evidence),
    };
    let notes = vec![
        "ties go to the candidate listed first".to_owned(),
        "alpha is optimized separately for each candidate".to_owned(),
        "aic/bic use rss = |(I - M) y|^2 and d = tr M".to_owned(),
        "bms: polynomial candidates only, identity prior, noise precision estimated, minimized over alpha".to_owned(),
    ];
    let body = ReportBody {
        schema: SCHEMA_VERSION,
        tool: Tool {
            name: "lorp",
            version: env!("CARGO_PKG_VERSION"),
        },
        dataset: DatasetDigest {
            n: data.n(),
            m: data.m(),
            sha256: dataset_digest(&data),
        },
        config: config.clone(),
        candidates,
        winners,
        notes,
    };
    let generated_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(SelectionReport {
        content_digest: digest_of(&body),
        body,
        generated_at,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One loss-rank-versus-complexity table per family sweep, written as
/// `<stem>.<family>.csv` in `dir`. Returns the written paths.
pub fn write_curves(report: &SelectionReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let sweeps = &report.body.config.families;
    for (s, sweep) in sweeps.iter().enumerate() {
        let name = sweep.family.name();
        let repeats = sweeps.iter().filter(|f| f.family == sweep.family).count();
        let file = if repeats > 1 {
            format!("{stem}.{name}-{s}.csv")
        } else {
            format!("{stem}.{name}.csv")
        };
        let path = dir.join(file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_record([
            sweep.family.param(),
            "lr",
            "alpha_star",
            "aic",
            "bic",
            "bms",
            "d_eff_trace",
            "ok",
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
        for r in report.body.candidates.iter().filter(|r| r.sweep == s) {
            w.write_record([
                r.param.to_string(),
                opt(r.lr),
                opt(r.alpha_star),
                opt(r.baselines.aic),
                opt(r.baselines.bic),
                opt(r.baselines.bms_neg_log_evidence),
                opt(r.baselines.d_eff_trace),
                r.ok.to_string(),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SynthKind;

    fn config(families: &[&str], data: DataSource) -> RunConfig {
        RunConfig {
            data,
            families: families.iter().map(|f| f.parse().unwrap()).collect(),
            lorp: LossRankOptions::default(),
            baselines: BaselineToggles::default(),
            seed: 0,
        }
    }

    fn example4_csv() -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "x,y\n1,1\n2,2\n").unwrap();
        f
    }

    #[test]
    fn example4_selects_the_mean() {
        let f = example4_csv();
        let cfg = config(
            &["poly:d=0..2"],
            DataSource::Csv {
                path: f.path().to_owned(),
                target: "y".into(),
            },
        );
        let rep = run_selection(&cfg).unwrap();
        assert_eq!(rep.body.winners.lorp.as_ref().unwrap().index, 1);
        assert_eq!(rep.body.candidates.len(), 3);
        // d = 1 goes through the closed form, d = 0 and d = 2 do not qualify.
        assert_eq!(rep.body.candidates[1].method, Some(Method::ClosedForm));
        assert_eq!(rep.body.candidates[0].method, Some(Method::Numeric));
        assert!((rep.body.candidates[1].lr.unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_wins_everything() {
        let data = DataSource::Synthetic {
            spec: SynthSpec {
                kind: SynthKind::Polynomial {
                    coeffs: vec![1.0, 0.0, 2.0],
                },
                n: 20,
                noise_sd: 0.1,
                x_range: (-1.0, 1.0),
            },
            seed: 0,
        };
        let rep = run_selection(&config(&["poly:d=3"], data)).unwrap();
        let w = &rep.body.winners;
        for win in [&w.lorp, &w.aic, &w.bic, &w.bms] {
            assert_eq!(win.as_ref().unwrap().index, 0);
        }
    }

    #[test]
    fn failures_are_recorded_and_excluded() {
        let f = example4_csv();
        let cfg = config(
            &["knn:k=1..3"],
            DataSource::Csv {
                path: f.path().to_owned(),
                target: "y".into(),
            },
        );
        let rep = run_selection(&cfg).unwrap();
        assert!(!rep.body.candidates[2].ok);
        assert!(rep.body.candidates[2].error.as_ref().unwrap().contains("k"));
        assert!(rep.body.winners.lorp.is_some());

        let cfg = config(
            &["knn:k=3..4"],
            DataSource::Csv {
                path: f.path().to_owned(),
                target: "y".into(),
            },
        );
        assert!(run_selection(&cfg).unwrap().all_failed());
    }

    #[test]
    fn digest_ignores_timestamp() {
        let f = example4_csv();
        let cfg = config(
            &["poly:d=0..2", "knn:k=1..2"],
            DataSource::Csv {
                path: f.path().to_owned(),
                target: "y".into(),
            },
        );
        let mut a = run_selection(&cfg).unwrap();
        let b = run_selection(&cfg).unwrap();
        a.generated_at = 0;
        assert_eq!(a.content_digest, b.content_digest);
        assert_eq!(a.body, b.body);

        let dir = tempfile::tempdir().unwrap();
        let paths = write_curves(&a, dir.path(), "report").unwrap();
        assert_eq!(paths.len(), 2);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("d,lr,alpha_star"));
        assert_eq!(text.lines().count(), 4);
    }
}
