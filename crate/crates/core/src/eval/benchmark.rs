//! Dataset-level evaluation: simulated prompts, simulated edits, Dice with
//! bootstrap intervals and a paired test of edited against initial Dice.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::dice;
use super::simulate::{simulate_edit, simulate_prompt, PromptMode};
use super::stats::{
    bootstrap_ci, mean, wilcoxon_signed_rank, WilcoxonResult, DEFAULT_RESAMPLES, DEFAULT_SEED,
};
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::nifti::{read_mask, read_volume, write_mask, write_volume};
use crate::phantom::Phantom;
use crate::pipeline::EngineConfig;
use crate::prompts::{PointPrompt, PromptSet};
use crate::session::Session;
use crate::volume::{normalize_ct, IntensityVolume, LabelVolume};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One case of a dataset manifest; paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    /// Opens a manifest file, or `manifest.json` inside a directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(Error::Dataset(format!("duplicate case id {:?}", e.id)));
            }
        }
        Ok(Dataset {
            root: file.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads one case: the CT normalized to `[0, 1]` and its mask.
    pub fn load(&self, e: &ManifestEntry) -> Result<(IntensityVolume, LabelVolume)> {
        let image = read_volume(self.resolve(&e.image))?;
        let mask = read_mask(self.resolve(&e.mask))?;
        if image.shape() != mask.shape() {
            return Err(Error::ShapeMismatch {
                expected: image.shape(),
                actual: mask.shape(),
            });
        }
        Ok((normalize_ct(&image), mask))
    }
}

/// Writes phantoms as gzipped NIfTI pairs plus a manifest; returns the manifest path.
pub fn write_phantom_dataset(
    dir: impl AsRef<Path>,
    cases: &[(String, String, Phantom)],
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cases.len());
    for (id, label, ph) in cases {
        let image = PathBuf::from(format!("{id}_image.nii.gz"));
        let mask = PathBuf::from(format!("{id}_mask.nii.gz"));
        write_volume(&ph.volume, dir.join(&image))?;
        write_mask(&ph.mask, dir.join(&mask))?;
        entries.push(ManifestEntry {
            id: id.clone(),
            image,
            mask,
            label: label.clone(),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&entries)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub engine: EngineConfig,
    pub edit_rounds: usize,
    pub modes: Vec<PromptMode>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Simulated clicks shallower than this (chessboard depth inside the
    /// error component) are skipped and the previous Dice carried forward.
    pub min_edit_depth: u32,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            engine: EngineConfig::default(),
            edit_rounds: 3,
            modes: PromptMode::ALL.to_vec(),
            bootstrap_resamples: DEFAULT_RESAMPLES,
            seed: DEFAULT_SEED,
            min_edit_depth: 2,
        }
    }
}

/// Per-case, per-mode trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTrace {
    pub id: String,
    pub label: String,
    pub mode: PromptMode,
    /// Dice after the initial prompt, then after each edit round.
    pub dice: Vec<f64>,
    /// Click applied in each round, `None` when the round was skipped.
    pub edits: Vec<Option<PointPrompt>>,
    pub encodes: usize,
    pub decodes: usize,
}

impl CaseTrace {
    pub fn initial(&self) -> f64 {
        self.dice[0]
    }

    pub fn last(&self) -> f64 {
        *self.dice.last().expect("at least the initial Dice")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub id: String,
    pub error: String,
}

/// Initial segmentation from a simulated prompt followed by `edit_rounds`
/// simulated corrective clicks. `volume` must be normalized.
pub fn evaluate_case(
    id: &str,
    label: &str,
    volume: Arc<IntensityVolume>,
    gt: &LabelVolume,
    mode: PromptMode,
    backend: &dyn Backend,
    cfg: &BenchmarkConfig,
) -> Result<CaseTrace> {
    let prompts = simulate_prompt(gt, mode)?;
    evaluate_from_prompts(id, label, volume, gt, mode, prompts, backend, cfg)
}

/// As [`evaluate_case`], starting from caller-supplied initial prompts.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_from_prompts(
    id: &str,
    label: &str,
    volume: Arc<IntensityVolume>,
    gt: &LabelVolume,
    mode: PromptMode,
    prompts: PromptSet,
    backend: &dyn Backend,
    cfg: &BenchmarkConfig,
) -> Result<CaseTrace> {
    if volume.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            expected: volume.shape(),
            actual: gt.shape(),
        });
    }
    let mut session = Session::start(volume, prompts, backend, &cfg.engine)?;
    let mut trace = CaseTrace {
        id: id.to_string(),
        label: label.to_string(),
        mode,
        dice: vec![dice(session.current_mask(), gt)?],
        edits: Vec::with_capacity(cfg.edit_rounds),
        encodes: 0,
        decodes: 0,
    };
    for _ in 0..cfg.edit_rounds {
        let prev = *trace.dice.last().expect("non-empty");
        let click = match simulate_edit(gt, session.current_mask()) {
            Ok(e) if e.depth >= cfg.min_edit_depth => Some(e.point),
            Ok(_) | Err(Error::NothingToEdit) => None,
            Err(e) => return Err(e),
        };
        match click {
            Some(p) => {
                session.edit(p, backend, &cfg.engine)?;
                trace.dice.push(dice(session.current_mask(), gt)?);
            }
            None => trace.dice.push(prev),
        }
        trace.edits.push(click);
    }
    let c = session.counters();
    trace.encodes = c.encode;
    trace.decodes = c.decode;
    Ok(trace)
}

/// Dice summary over cases, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub mean_dice: f64,
    pub ci95: [f64; 2],
    pub n_cases: usize,
    pub per_organ: BTreeMap<String, f64>,
    /// Edited against initial Dice; absent for the initial summary.
    pub paired_test: Option<WilcoxonResult>,
    /// Why the paired test could not be run, when it could not.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired_test_note: Option<String>,
}

/// Summary of Dice values (fractions); bootstrap is seeded by `seed`.
pub fn summarize(
    values: &[(String, f64)],
    resamples: usize,
    seed: u64,
    paired_against: Option<&[f64]>,
) -> Result<SummaryReport> {
    if values.is_empty() {
        return Err(Error::Dataset("no cases to summarize".into()));
    }
    let d: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let (lo, hi) = bootstrap_ci(&d, resamples, seed)?;
    let mut organs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (label, v) in values {
        organs.entry(label.clone()).or_default().push(*v);
    }
    let (paired_test, paired_test_note) = match paired_against {
        None => (None, None),
        Some(base) => match wilcoxon_signed_rank(&d, base) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        },
    };
    Ok(SummaryReport {
        mean_dice: 100.0 * mean(&d),
        ci95: [100.0 * lo, 100.0 * hi],
        n_cases: d.len(),
        per_organ: organs
            .into_iter()
            .map(|(k, v)| (k, 100.0 * mean(&v)))
            .collect(),
        paired_test,
        paired_test_note,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: PromptMode,
    pub initial: SummaryReport,
    pub edited: SummaryReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub backend: String,
    pub edit_rounds: usize,
    pub modes: Vec<ModeReport>,
    pub cases: Vec<CaseTrace>,
    pub failures: Vec<CaseFailure>,
}

impl BenchmarkReport {
    /// Aligned text table, one row per prompt mode.
    pub fn table(&self) -> String {
        let edited = format!("Dice after {} edits", self.edit_rounds);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>4}  {:<24} {:<24} {:>10}",
            "prompt", "n", "Dice initial", edited, "p"
        );
        for m in &self.modes {
            let cell = |r: &SummaryReport| {
                format!("{:.2} [{:.2}, {:.2}]", r.mean_dice, r.ci95[0], r.ci95[1])
            };
            let p = m
                .edited
                .paired_test
                .map(|t| format!("{:.3e}", t.p_value))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                s,
                "{:<8} {:>4}  {:<24} {:<24} {:>10}",
                m.mode.as_str(),
                m.initial.n_cases,
                cell(&m.initial),
                cell(&m.edited),
                p
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "{} case(s) failed:", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(s, "  {}: {}", f.id, f.error);
            }
        }
        s
    }
}

/// Evaluates every case under every configured prompt mode.
///
/// A case that fails to load or segment is recorded in `failures` and left
/// out of the summaries. Results are ordered by case id, so the report does
/// not depend on scheduling.
pub fn run_benchmark(
    dataset: &Dataset,
    backend: &dyn Backend,
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if dataset.entries.is_empty() {
        return Err(Error::Dataset("manifest lists no cases".into()));
    }
    if cfg.modes.is_empty() {
        return Err(Error::InvalidConfig("no prompt modes selected".into()));
    }
    cfg.engine.validate()?;
    let mut entries: Vec<&ManifestEntry> = dataset.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let outcomes: Vec<std::result::Result<Vec<CaseTrace>, CaseFailure>> = entries
        .par_iter()
        .map(|e| {
            let fail = |err: Error| CaseFailure {
                id: e.id.clone(),
                error: err.to_string(),
            };
            let (image, gt) = dataset.load(e).map_err(fail)?;
            let image = Arc::new(image);
            cfg.modes
                .iter()
                .map(|&m| evaluate_case(&e.id, &e.label, image.clone(), &gt, m, backend, cfg))
                .collect::<Result<Vec<_>>>()
                .map_err(fail)
        })
        .collect();

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => cases.extend(t),
            Err(f) => failures.push(f),
        }
    }
    if cases.is_empty() {
        return Err(Error::Dataset(format!(
            "all {} cases failed",
            failures.len()
        )));
    }

    let mut modes = Vec::new();
    for &mode in &cfg.modes {
        let traces: Vec<&CaseTrace> = cases.iter().filter(|t| t.mode == mode).collect();
        let initial: Vec<(String, f64)> = traces
            .iter()
            .map(|t| (t.label.clone(), t.initial()))
            .collect();
        let edited: Vec<(String, f64)> =
            traces.iter().map(|t| (t.label.clone(), t.last())).collect();
        let base: Vec<f64> = initial.iter().map(|(_, v)| *v).collect();
        modes.push(ModeReport {
            mode,
            initial: summarize(&initial, cfg.bootstrap_resamples, cfg.seed, None)?,
            edited: summarize(&edited, cfg.bootstrap_resamples, cfg.seed, Some(&base))?,
        });
    }
    Ok(BenchmarkReport {
        backend: backend.name().to_string(),
        edit_rounds: cfg.edit_rounds,
        modes,
        cases,
        failures,
    })
}
