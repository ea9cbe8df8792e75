use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{Dataset, ShapeSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::checkpoint::{module_tensors, restore_module};
use crate::trainer::{condition_tokens, Checkpoint, Networks, TrainConfig};

use super::classifier::{train_classifier, ClassifierConfig, ConvClassifier};
use super::plot::emit_bar_plot;
use super::score::{inception_score, ScoreResult, Scorer};

/// One image per evaluation sample, conditioned on its attributes (under the
/// arm's condition mode) and its mask.
pub fn generate_for_split(nets: &Networks, config: &TrainConfig, split: &Dataset, noise_seed: u64) -> Result<Vec<Tensor>> {
    let names = &split.manifest.attribute_names;
    let mut tokens = Vec::with_capacity(split.len());
    let mut masks = Vec::with_capacity(split.len());
    for s in split {
        match condition_tokens(&s.attributes, names, config.condition) {
            Ok(t) => {
                tokens.push(t);
                masks.push(&s.mask);
            }
            Err(Error::EmptyCondition) => continue,
            Err(e) => return Err(e),
        }
    }
    nets.synthesize(&tokens, &masks, noise_seed)
}

pub fn score_generator(
    nets: &Networks,
    config: &TrainConfig,
    split: &Dataset,
    scorer: &Scorer,
    n_splits: usize,
    noise_seed: u64,
) -> Result<ScoreResult> {
    let images = generate_for_split(nets, config, split, noise_seed)?;
    inception_score(&images.iter().collect::<Vec<_>>(), scorer, n_splits)
}

/// Fill-colour classifier over real images, used to check single-attribute
/// conditioning.
pub fn train_color_oracle(spec: &ShapeSpec, real: &[&Dataset], config: &ClassifierConfig) -> Result<(ConvClassifier, f64)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for ds in real {
        for s in ds.iter() {
            let fill = spec
                .factors_of(&s.attributes)
                .ok_or_else(|| Error::Validation(format!("sample {} has no clean factor labels", s.id)))?
                .fill;
            images.push(&s.image);
            labels.push(fill);
        }
    }
    let trained = train_classifier(&images, &labels, spec.fill_colors, config)?;
    Ok((trained.model, trained.holdout_accuracy))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningCheck {
    /// Per fill colour: fraction of generations the oracle assigns to it.
    pub per_color: Vec<f64>,
    pub accuracy: f64,
}

/// Generates `per_color` images from the single token of each fill colour
/// (masks cycle through `masks`) and scores them with the colour oracle.
pub fn single_attribute_conditioning(
    nets: &Networks,
    spec: &ShapeSpec,
    masks: &[&Tensor],
    oracle: &ConvClassifier,
    per_color: usize,
    noise_seed: u64,
) -> Result<ConditioningCheck> {
    if masks.is_empty() || per_color == 0 {
        return Err(Error::Argument("need masks and at least one image per colour".into()));
    }
    let mut tokens = Vec::new();
    let mut used_masks = Vec::new();
    for color in 0..spec.fill_colors {
        for k in 0..per_color {
            tokens.push(vec![spec.fill_attribute(color)]);
            used_masks.push(masks[(color * per_color + k) % masks.len()]);
        }
    }
    let images = nets.synthesize(&tokens, &used_masks, noise_seed)?;
    let predicted = oracle.predict(&images.iter().collect::<Vec<_>>());
    let per: Vec<f64> = (0..spec.fill_colors)
        .map(|c| predicted[c * per_color..(c + 1) * per_color].iter().filter(|&&p| p == c).count() as f64 / per_color as f64)
        .collect();
    let accuracy = per.iter().sum::<f64>() / per.len() as f64;
    Ok(ConditioningCheck { per_color: per, accuracy })
}

pub fn save_scorer(scorer: &Scorer, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new([0; 32], 0, 0);
    ck.push(
        "scorer_meta",
        vec![
            ("class_ids".into(), Tensor::new(&[scorer.class_ids.len()], scorer.class_ids.iter().map(|&c| c as f64).collect())),
            ("holdout_accuracy".into(), Tensor::scalar(scorer.holdout_accuracy)),
        ],
    );
    ck.push("scorer", module_tensors(&scorer.classifier));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ck.save(path)
}

pub fn load_scorer(path: &Path) -> Result<Scorer> {
    let ck = Checkpoint::load(path)?;
    let meta = ck.section("scorer_meta")?;
    let find = |name: &str| {
        meta.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| Error::Checkpoint(format!("scorer_meta lacks {name}")))
    };
    let class_ids: Vec<usize> = find("class_ids")?.data().iter().map(|&v| v as usize).collect();
    let holdout_accuracy = find("holdout_accuracy")?.item();
    let mut rng = crate::rng::stream(0, crate::rng::Purpose::Init, 100);
    let mut classifier = ConvClassifier::new(class_ids.len(), &mut rng);
    restore_module(&mut classifier, "scorer", ck.section("scorer")?)?;
    Ok(Scorer { classifier, class_ids, holdout_accuracy })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmRow {
    pub arm: String,
    pub score: ScoreResult,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<ArmRow>,
    /// Arms whose checkpoint could not be found.
    pub missing: Vec<String>,
}

impl AblationTable {
    pub fn is_partial(&self) -> bool {
        !self.missing.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,is_mean,is_std,n_images,splits,status\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{},{},ok", r.arm, r.score.mean, r.score.std, r.score.n_images, r.score.splits);
        }
        for m in &self.missing {
            let _ = writeln!(s, "{m},,,,,missing");
        }
        s
    }

    /// Writes `ablation.csv` and `ablation.png` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("ablation.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let png = dir.join("ablation.png");
        let bars: Vec<(String, f64, f64)> = self.rows.iter().map(|r| (r.arm.clone(), r.score.mean, r.score.std)).collect();
        if !bars.is_empty() {
            emit_bar_plot(&bars, &png)?;
        }
        Ok((csv, png))
    }
}

/// Latest checkpoint under `output_dir/checkpoints`, if any.
pub fn latest_checkpoint(output_dir: &Path) -> Option<PathBuf> {
    let dir = output_dir.join("checkpoints");
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    found.sort();
    found.pop()
}

/// Scores every arm (name, config) from its latest checkpoint. Arms without
/// a checkpoint are skipped with a warning and listed as missing.
pub fn run_ablation(
    arms: &[(String, TrainConfig)],
    split: &Dataset,
    scorer: &Scorer,
    n_splits: usize,
    noise_seed: u64,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for (name, config) in arms {
        let Some(path) = latest_checkpoint(&config.output_dir) else {
            eprintln!("warning: arm {name} has no checkpoint under {}, skipped", config.output_dir.display());
            table.missing.push(name.clone());
            continue;
        };
        let ck = Checkpoint::load(&path)?;
        let mut nets = Networks::new(config, split.num_attributes())?;
        nets.restore(&ck)?;
        nets.swap_average();
        let score = score_generator(&nets, config, split, scorer, n_splits, noise_seed)?;
        table.rows.push(ArmRow { arm: name.clone(), score });
    }
    Ok(table)
}
