use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thermomark::association::{default_schema, field_value, table_one, VariableSchema, FIELDS};
use thermomark::clinical::{risk_profile, risk_profiles_csv, CoefficientTable, RiskProfile};
use thermomark::clustering::{
    adjusted_rand_index, cluster_exemplars, cut_tree, explained_variance_curve, select_k_elbow, silhouette_score,
    standardize, tsne_embed, ward_linkage,
};
use thermomark::ingest::{
    load_image_pair, load_manifest, load_segmented_thermal, load_visual, write_thermal_raw, Manifest,
    ParticipantRecord, TempWindow, ThermalGrid, VisualImage,
};
use thermomark::plots::{dendrogram_svg, elbow_svg, exemplar_montage, save_png, tsne_svg};
use thermomark::prediction::{
    cluster_label_sensitivity, default_tasks, permute_targets, run_task, write_eval_results, Backbone, InputMode,
    PredictionDataset, PredictionError, PredictionTask, TaskKind, CLUSTER_TASK,
};
use thermomark::representation::{
    prepare_input, read_latents, train_convae, write_latents, ConvAeModel, LATENT_CHANNELS, LATENT_SIZE,
};
use thermomark::segmentation::{
    iou, mask_thermal, split_pairs, staple_consensus, train_segmenter, BinaryMask,
};
use thermomark::synthdata::{generate_cohort, layout, read_planted_truth};
use thermomark::training::derive_seed;

use crate::config::{ConfigError, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Segment,
    Represent,
    Cluster,
    Profile,
    Associate,
    Predict,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Segment,
        Stage::Represent,
        Stage::Cluster,
        Stage::Profile,
        Stage::Associate,
        Stage::Predict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Segment => "segment",
            Stage::Represent => "represent",
            Stage::Cluster => "cluster",
            Stage::Profile => "profile",
            Stage::Associate => "associate",
            Stage::Predict => "predict",
        }
    }

    /// Output directory under the run root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Synth => "cohort",
            s => s.name(),
        }
    }
}

const MODELS: &str = "models";
const SEGMENTER_CKPT: &str = "segmenter.ckpt";
const CONVAE_CKPT: &str = "convae.ckpt";
const CHUNK: usize = 16;

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    window: TempWindow,
    coeffs: CoefficientTable,
    schema: Vec<VariableSchema>,
    tasks: Vec<PredictionTask>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Named prerequisite check; the error reads "<what> missing".
fn require(path: &Path, what: &str, producer: Stage) -> Result<()> {
    if !path.exists() {
        bail!(
            "{what} missing: {} not found (run `thermomark {}` first)",
            path.display(),
            producer.name()
        );
    }
    Ok(())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Pipeline {
    /// Loads the pieces of configuration that live in files and checks
    /// field names, so bad values surface as config errors before any
    /// stage runs.
    pub fn new(cfg: PipelineConfig) -> Result<Self, ConfigError> {
        let window = cfg.window()?;
        let coeffs = match &cfg.clinical.coefficients {
            Some(p) => CoefficientTable::load(p).map_err(|e| ConfigError(format!("[clinical] {e}")))?,
            None => CoefficientTable::default(),
        };
        let schema = cfg.association.variables.clone().unwrap_or_else(default_schema);
        if let Some(s) = schema.iter().find(|s| !FIELDS.contains(&s.name.as_str())) {
            return Err(ConfigError(format!("[association] unknown variable {:?}", s.name)));
        }
        let tasks = cfg.prediction.tasks.clone().unwrap_or_else(default_tasks);
        if let Some(t) = tasks
            .iter()
            .find(|t| t.target != "cluster" && !FIELDS.contains(&t.target.as_str()))
        {
            return Err(ConfigError(format!("[prediction] task {:?} has unknown target {:?}", t.name, t.target)));
        }
        Ok(Pipeline {
            out: cfg.out_dir(),
            cfg,
            window,
            coeffs,
            schema,
            tasks,
        })
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.dir())
    }

    fn models(&self) -> PathBuf {
        self.out.join(MODELS)
    }

    fn manifest_path(&self) -> PathBuf {
        self.cfg
            .paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.dir(Stage::Synth).join(layout::MANIFEST))
    }

    fn manifest(&self) -> Result<Manifest> {
        let p = self.manifest_path();
        require(&p, "manifest", Stage::Synth)?;
        load_manifest(&p).with_context(|| format!("loading {}", p.display()))
    }

    fn thermal_path(&self, id: &str) -> PathBuf {
        self.dir(Stage::Segment).join("thermal").join(format!("{id}.f32"))
    }

    fn segmented(&self, id: &str) -> Result<ThermalGrid> {
        let p = self.thermal_path(id);
        require(&p, "segmented thermal", Stage::Segment)?;
        load_segmented_thermal(&p).with_context(|| format!("loading {}", p.display()))
    }

    fn recorded_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().into_owned()
    }

    fn provenance(&self, stage: Stage, seed: u64, inputs: &[PathBuf]) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(self.recorded_path(p), sha256_file(p)?);
        }
        let value = json!({
            "stage": stage.name(),
            "config_hash": self.cfg.hash(),
            "seed": seed,
            "versions": {
                "thermomark": env!("CARGO_PKG_VERSION"),
                "artifact_format": 1,
            },
            "inputs": hashes,
            "config": self.cfg.recorded(),
        });
        write_json(&self.dir(stage).join("provenance.json"), &value)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        let t = Instant::now();
        eprintln!("[{}] starting", stage.name());
        fs::create_dir_all(self.dir(stage)).with_context(|| format!("cannot create {}", self.dir(stage).display()))?;
        match stage {
            Stage::Synth => self.synth(),
            Stage::Segment => self.segment(),
            Stage::Represent => self.represent(),
            Stage::Cluster => self.cluster(),
            Stage::Profile => self.profile(),
            Stage::Associate => self.associate(),
            Stage::Predict => self.predict(),
        }
        .with_context(|| format!("stage {} failed", stage.name()))?;
        eprintln!("[{}] done in {:.1}s", stage.name(), t.elapsed().as_secs_f64());
        Ok(())
    }

    fn synth(&self) -> Result<()> {
        let dir = self.dir(Stage::Synth);
        let (manifest, _) = generate_cohort(&self.cfg.synth, &dir)?;
        eprintln!("[synth] {} participants in {}", manifest.len(), dir.display());
        if self.cfg.paths.manifest.is_some() {
            eprintln!("[synth] note: paths.manifest is set, later stages read that manifest instead");
        }
        self.provenance(Stage::Synth, self.cfg.synth.seed, &[dir.join(layout::MANIFEST)])
    }

    fn segment(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let seg = &self.cfg.segmentation;
        let dir = self.dir(Stage::Segment);
        let raters_dir = seg
            .raters_dir
            .clone()
            .unwrap_or_else(|| manifest.base_dir.join(layout::RATER_DIR));
        for sub in ["consensus", "masks", "thermal"] {
            fs::create_dir_all(dir.join(sub))?;
        }

        // STAPLE consensus for every participant with rater masks.
        let mut staple_csv = String::from("participant_id,n_raters,iterations,converged,prior,log_likelihood,sensitivity,specificity\n");
        let mut pairs: Vec<(String, VisualImage, BinaryMask)> = Vec::new();
        let mut inputs = vec![self.manifest_path()];
        for row in &manifest.rows {
            let id = row.participant_id();
            let files: Vec<PathBuf> = (0..)
                .map(|k| raters_dir.join(layout::rater_file(id, k)))
                .take_while(|p| p.exists())
                .collect();
            if files.is_empty() {
                continue;
            }
            let masks = files
                .iter()
                .map(|p| BinaryMask::load_png(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let res = staple_consensus(&masks, &seg.staple).with_context(|| format!("STAPLE for {id}"))?;
            let join = |v: Vec<String>| v.join(";");
            staple_csv.push_str(&format!(
                "{id},{},{},{},{},{},{},{}\n",
                masks.len(),
                res.iterations,
                res.converged,
                res.prior,
                res.log_likelihood.last().copied().unwrap_or(f64::NAN),
                join(res.performance.iter().map(|r| r.p.to_string()).collect()),
                join(res.performance.iter().map(|r| r.q.to_string()).collect()),
            ));
            res.consensus.save_png(&dir.join("consensus").join(format!("{id}.png")))?;
            let visual = load_visual(&manifest.resolve(&row.visual_path))?;
            pairs.push((id.to_string(), visual, res.consensus));
            inputs.extend(files);
        }
        if pairs.len() < 2 {
            bail!(
                "rater masks missing: at least 2 rated participants are needed, found {} in {}",
                pairs.len(),
                raters_dir.display()
            );
        }
        write(&dir.join("staple.csv"), staple_csv)?;
        eprintln!("[segment] consensus for {} rated participants", pairs.len());

        let (train, val) = split_pairs(&pairs, seg.unet.val_fraction, seg.unet.seed);
        let strip = |v: &[(String, VisualImage, BinaryMask)]| -> Vec<(VisualImage, BinaryMask)> {
            v.iter().map(|(_, img, m)| (img.clone(), m.clone())).collect()
        };
        let trained = train_segmenter(&strip(&train), &strip(&val), &seg.unet)?;
        eprintln!("[segment] U-Net validation IoU {:.4}", trained.val_iou);
        fs::create_dir_all(self.models())?;
        trained.model.save(&self.models().join(SEGMENTER_CKPT))?;
        write_json(&dir.join("training_log.json"), &trained.log)?;
        let train_ids: Vec<&str> = train.iter().map(|p| p.0.as_str()).collect();

        // Predict, mask and compare with reference masks where present.
        let truth_dir = manifest.base_dir.join(layout::MASK_DIR);
        let (mut iou_heldout, mut iou_train) = (Vec::new(), Vec::new());
        let mut empty = Vec::new();
        let mut fractions = Vec::new();
        for chunk in manifest.rows.chunks(CHUNK) {
            let loaded = chunk
                .iter()
                .map(|r| load_image_pair(&manifest, r))
                .collect::<Result<Vec<_>, _>>()?;
            let images: Vec<&VisualImage> = loaded.iter().map(|p| &p.visual).collect();
            let masks = trained.model.predict_masks(&images);
            for (pair, mask) in loaded.iter().zip(&masks) {
                let id = pair.participant_id.as_str();
                mask.save_png(&dir.join("masks").join(format!("{id}.png")))?;
                write_thermal_raw(&mask_thermal(&pair.thermal, mask)?, &self.thermal_path(id))?;
                fractions.push(mask.foreground_fraction());
                if mask.count() == 0 {
                    empty.push(id.to_string());
                }
                let truth_path = truth_dir.join(format!("{id}.png"));
                if truth_path.exists() {
                    let score = iou(mask, &BinaryMask::load_png(&truth_path)?)?;
                    if train_ids.contains(&id) {
                        iou_train.push(score);
                    } else {
                        iou_heldout.push(score);
                    }
                }
            }
        }
        let summary = json!({
            "n_participants": manifest.len(),
            "n_rated": pairs.len(),
            "n_train": train.len(),
            "n_val": val.len(),
            "val_iou": trained.val_iou,
            "best_epoch": trained.log.best_epoch,
            "mean_foreground_fraction": mean(&fractions),
            "empty_masks": empty,
            "reference_iou": {
                "heldout_n": iou_heldout.len(),
                "heldout_mean": mean(&iou_heldout),
                "heldout_min": iou_heldout.iter().copied().reduce(f64::min),
                "train_n": iou_train.len(),
                "train_mean": mean(&iou_train),
            },
        });
        write_json(&dir.join("segment_summary.json"), &summary)?;
        if let Some(m) = mean(&iou_heldout) {
            eprintln!("[segment] IoU against reference masks, held out: {m:.4} (n={})", iou_heldout.len());
        }
        self.provenance(Stage::Segment, seg.unet.seed, &inputs[..1])
    }

    fn prepared_inputs(&self, manifest: &Manifest) -> Result<(Vec<String>, Vec<Vec<f32>>)> {
        let mut ids = Vec::with_capacity(manifest.len());
        let mut inputs = Vec::with_capacity(manifest.len());
        for row in &manifest.rows {
            let id = row.participant_id();
            let grid = self.segmented(id)?;
            let x = prepare_input(&grid, self.window, self.cfg.preprocess.mapping)
                .with_context(|| format!("preparing {id}"))?;
            ids.push(id.to_string());
            inputs.push(x);
        }
        Ok((ids, inputs))
    }

    fn represent(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let dir = self.dir(Stage::Represent);
        let (ids, inputs) = self.prepared_inputs(&manifest)?;
        let trained = train_convae(&inputs, &self.cfg.convae)?;
        eprintln!(
            "[represent] hold-out MSE {:.5}, MAE {:.5}",
            trained.holdout_mse, trained.holdout_mae
        );
        fs::create_dir_all(self.models())?;
        trained.model.save(&self.models().join(CONVAE_CKPT))?;
        let mut latents = Vec::with_capacity(ids.len());
        for (cid, cx) in ids.chunks(CHUNK).zip(inputs.chunks(CHUNK)) {
            let batch: Vec<(&str, &[f32])> = cid.iter().map(String::as_str).zip(cx.iter().map(Vec::as_slice)).collect();
            latents.extend(trained.model.encode_batch(&batch)?);
        }
        write_latents(&latents, &dir.join("latents.bin"), &dir.join("latent_ids.txt"))?;
        write_json(&dir.join("training_log.json"), &trained.log)?;
        let val_ids: Vec<&str> = trained.val_indices.iter().map(|&i| ids[i].as_str()).collect();
        write_json(
            &dir.join("represent_summary.json"),
            &json!({
                "n": ids.len(),
                "latent_shape": [LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE],
                "holdout_mse": trained.holdout_mse,
                "holdout_mae": trained.holdout_mae,
                "best_epoch": trained.log.best_epoch,
                "holdout_ids": val_ids,
            }),
        )?;
        let seg_prov = self.dir(Stage::Segment).join("provenance.json");
        self.provenance(Stage::Represent, self.cfg.convae.seed, &[self.manifest_path(), seg_prov])
    }

    fn cluster(&self) -> Result<()> {
        let rdir = self.dir(Stage::Represent);
        let (bin, ids_path) = (rdir.join("latents.bin"), rdir.join("latent_ids.txt"));
        require(&bin, "latents", Stage::Represent)?;
        require(&ids_path, "latents", Stage::Represent)?;
        let latents = read_latents(&bin, &ids_path)?;
        let cc = &self.cfg.clustering;
        let dir = self.dir(Stage::Cluster);
        let n = latents.len();
        if n < 3 {
            bail!("clustering needs at least 3 participants, got {n}");
        }
        let raw: Vec<Vec<f64>> = latents
            .iter()
            .map(|l| l.values.iter().map(|&v| v as f64).collect())
            .collect();
        let features = if cc.standardize { standardize(&raw) } else { raw };
        let ids: Vec<String> = latents.iter().map(|l| l.participant_id.clone()).collect();

        let tree = ward_linkage(&features)?;
        let curve = explained_variance_curve(&features, &tree, cc.k_max.min(n))?;
        let k_elbow = select_k_elbow(&curve)?;
        let k = cc.k.unwrap_or(k_elbow);
        let labels = cut_tree(&tree, k)?;
        let silhouette = if k < n { Some(silhouette_score(&features, &labels)?) } else { None };

        // t-SNE needs n > 3·perplexity.
        let mut tsne_cfg = cc.tsne.clone();
        tsne_cfg.perplexity = tsne_cfg.perplexity.min((n as f64 - 1.0) / 3.0);
        let embedding = tsne_embed(&features, &tsne_cfg)?;
        let exemplars = cluster_exemplars(&labels, &features, cc.exemplars)?;

        let mut sizes = BTreeMap::new();
        for &l in &labels {
            *sizes.entry(l).or_insert(0usize) += 1;
        }
        let planted_path = self
            .manifest_path()
            .parent()
            .map(|p| p.join(layout::PLANTED_TRUTH))
            .filter(|p| p.exists());
        let ari = match &planted_path {
            Some(p) => {
                let truth = read_planted_truth(p)?;
                let planted: Option<Vec<usize>> = ids.iter().map(|id| truth.cluster_of(id)).collect();
                planted.map(|planted| adjusted_rand_index(&labels, &planted))
            }
            None => None,
        };

        write(&dir.join("linkage.csv"), tree.to_csv())?;
        let mut assign = String::from("participant_id,cluster\n");
        let mut tsne_csv = String::from("participant_id,x,y,cluster\n");
        for (i, id) in ids.iter().enumerate() {
            assign.push_str(&format!("{id},{}\n", labels[i]));
            tsne_csv.push_str(&format!("{id},{},{},{}\n", embedding[i][0], embedding[i][1], labels[i]));
        }
        write(&dir.join("assignments.csv"), assign)?;
        write(&dir.join("tsne.csv"), tsne_csv)?;
        let elbow: String = std::iter::once("k,explained_variance\n".to_string())
            .chain(curve.iter().map(|(k, v)| format!("{k},{v}\n")))
            .collect();
        write(&dir.join("elbow.csv"), elbow)?;

        let exemplar_ids: Vec<Value> = exemplars
            .iter()
            .map(|(c, idx)| json!({"cluster": c, "participants": idx.iter().map(|&i| &ids[i]).collect::<Vec<_>>()}))
            .collect();
        write_json(
            &dir.join("cluster_summary.json"),
            &json!({
                "n": n,
                "k": k,
                "k_elbow": k_elbow,
                "standardized": cc.standardize,
                "silhouette": silhouette,
                "explained_variance": curve.iter().map(|&(k, v)| json!({"k": k, "ev": v})).collect::<Vec<_>>(),
                "cluster_sizes": sizes,
                "tsne_perplexity": tsne_cfg.perplexity,
                "exemplars": exemplar_ids,
                "ari_vs_planted": ari,
            }),
        )?;

        write(&dir.join("dendrogram.svg"), dendrogram_svg(&tree, Some(&labels))?)?;
        write(&dir.join("elbow.svg"), elbow_svg(&curve, k)?)?;
        write(&dir.join("tsne.svg"), tsne_svg(&embedding, &labels)?)?;
        let grids: Vec<Vec<ThermalGrid>> = exemplars
            .iter()
            .map(|(_, idx)| idx.iter().map(|&i| self.segmented(&ids[i])).collect())
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<&ThermalGrid>> = grids.iter().map(|r| r.iter().collect()).collect();
        save_png(&exemplar_montage(&rows, self.window)?, &dir.join("exemplars.png"))?;

        eprintln!(
            "[cluster] k={k} (elbow {k_elbow}), sizes {:?}, silhouette {}",
            sizes.values().collect::<Vec<_>>(),
            silhouette.map_or("n/a".into(), |s| format!("{s:.3}"))
        );
        let mut inputs = vec![bin, ids_path];
        inputs.extend(planted_path);
        self.provenance(Stage::Cluster, tsne_cfg.seed, &inputs)
    }

    fn profile(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let dir = self.dir(Stage::Profile);
        let mut profiles = Vec::with_capacity(manifest.len());
        for r in manifest.records() {
            let grid = self.segmented(&r.participant_id)?;
            profiles.push(
                risk_profile(r, Some(&grid), &self.coeffs).with_context(|| format!("profile for {}", r.participant_id))?,
            );
        }
        write(&dir.join("risk_profiles.csv"), risk_profiles_csv(&profiles))?;
        write_json(&dir.join("risk_profiles.json"), &profiles)?;
        let mut inputs = vec![self.manifest_path(), self.dir(Stage::Segment).join("provenance.json")];
        inputs.extend(self.cfg.clinical.coefficients.clone());
        self.provenance(Stage::Profile, 0, &inputs)
    }

    fn profiles(&self) -> Result<Vec<RiskProfile>> {
        let p = self.dir(Stage::Profile).join("risk_profiles.json");
        require(&p, "risk profiles", Stage::Profile)?;
        Ok(serde_json::from_slice(&fs::read(&p)?).with_context(|| format!("parsing {}", p.display()))?)
    }

    fn assignments(&self) -> Result<BTreeMap<String, usize>> {
        let p = self.dir(Stage::Cluster).join("assignments.csv");
        require(&p, "cluster assignments", Stage::Cluster)?;
        let text = fs::read_to_string(&p)?;
        text.lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (id, c) = l.split_once(',').with_context(|| format!("malformed line {l:?} in {}", p.display()))?;
                Ok((id.to_string(), c.parse()?))
            })
            .collect()
    }

    fn associate(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let profiles = self.profiles()?;
        let assignments = self.assignments()?;
        let records: Vec<ParticipantRecord> = manifest.records().cloned().collect();
        let table = table_one(&records, &profiles, &assignments, &self.schema)?;
        let dir = self.dir(Stage::Associate);
        write(&dir.join("table_one.md"), table.to_markdown())?;
        write(&dir.join("table_one.json"), table.to_json())?;
        let inputs = [
            self.manifest_path(),
            self.dir(Stage::Profile).join("risk_profiles.json"),
            self.dir(Stage::Cluster).join("assignments.csv"),
        ];
        self.provenance(Stage::Associate, 0, &inputs)
    }

    fn predict(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let profiles = self.profiles()?;
        let assignments = self.assignments()?;
        let pc = &self.cfg.prediction;
        let dir = self.dir(Stage::Predict);
        let encoder = match pc.predictor.backbone {
            Backbone::Pretrained => {
                let p = self.models().join(CONVAE_CKPT);
                require(&p, "autoencoder checkpoint", Stage::Represent)?;
                Some(ConvAeModel::load(&p)?)
            }
            Backbone::Custom => None,
        };

        let ids: Vec<String> = manifest.rows.iter().map(|r| r.participant_id().to_string()).collect();
        let grids = ids.iter().map(|id| self.segmented(id)).collect::<Result<Vec<_>>>()?;
        let visuals: Vec<VisualImage> = if self.tasks.iter().any(|t| t.input_mode == InputMode::ThermalPlusVisual) {
            manifest
                .rows
                .iter()
                .map(|r| load_visual(&manifest.resolve(&r.visual_path)))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let dataset = PredictionDataset::build(
            ids.clone(),
            &grids.iter().collect::<Vec<_>>(),
            &visuals.iter().collect::<Vec<_>>(),
            self.window,
            self.cfg.preprocess.mapping,
        )?;
        drop(visuals);

        let by_id: BTreeMap<&str, &RiskProfile> = profiles.iter().map(|p| (p.participant_id.as_str(), p)).collect();
        let cluster_target = |id: &String| assignments.get(id).map(|&c| if c == 1 { 1.0 } else { 0.0 });
        let hash = self.cfg.hash();
        let mut results = Vec::new();
        let mut logs = BTreeMap::new();
        let entry = |task: &PredictionTask, outcome: Result<(Value, Value), PredictionError>| -> Result<(Value, Option<Value>)> {
            let mut e = json!({
                "task": task.name,
                "target": task.target,
                "kind": task.kind,
                "input_mode": task.input_mode,
                "config_hash": hash,
            });
            let m = e.as_object_mut().expect("object");
            match outcome {
                Ok((eval, log)) => {
                    m.insert("status".into(), "ok".into());
                    for (k, v) in eval.as_object().expect("object") {
                        if k != "task" {
                            m.insert(k.clone(), v.clone());
                        }
                    }
                    Ok((e, Some(log)))
                }
                Err(
                    err @ (PredictionError::ClassAbsentInSplit { .. }
                    | PredictionError::CohortTooSmall { .. }
                    | PredictionError::EmptyDataset(_)
                    | PredictionError::EmptyTestSet
                    | PredictionError::SingleClassTestSet
                    | PredictionError::NonBinaryTarget(_)),
                ) => {
                    eprintln!("[predict] {} skipped: {err}", task.name);
                    m.insert("status".into(), "skipped".into());
                    m.insert("reason".into(), err.to_string().into());
                    Ok((e, None))
                }
                Err(err) => Err(err).with_context(|| format!("task {}", task.name)),
            }
        };
        let run = |task: &PredictionTask, targets: &[Option<f64>]| {
            run_task(task, &dataset, targets, &pc.predictor, encoder.as_ref()).map(|r| {
                eprintln!("[predict] {}: {} = {:.4}", task.name, r.eval.metric, r.eval.value);
                let log = json!({"log": r.trained.log, "split_ids": r.split_ids});
                (serde_json::to_value(&r.eval).expect("serializes"), log)
            })
        };

        for task in &self.tasks {
            let targets: Vec<Option<f64>> = if task.target == "cluster" {
                ids.iter().map(cluster_target).collect()
            } else {
                manifest
                    .records()
                    .map(|r| {
                        let p = by_id
                            .get(r.participant_id.as_str())
                            .with_context(|| format!("no risk profile for {}", r.participant_id))?;
                        Ok(field_value(&task.target, r, p)?)
                    })
                    .collect::<Result<_>>()?
            };
            let (e, log) = entry(task, run(task, &targets))?;
            results.push(e);
            if let Some(l) = log {
                logs.insert(task.name.clone(), l);
            }
        }

        // Cluster-label sensitivity and its permuted control.
        let cluster_task = PredictionTask::new(CLUSTER_TASK, "cluster", TaskKind::Binary, InputMode::ThermalOnly);
        let outcome = cluster_label_sensitivity(&dataset, &assignments, &pc.predictor, encoder.as_ref()).map(|eval| {
            eprintln!("[predict] {CLUSTER_TASK}: auc = {:.4}", eval.value);
            (serde_json::to_value(&eval).expect("serializes"), Value::Null)
        });
        results.push(entry(&cluster_task, outcome)?.0);
        if pc.permuted_control {
            let task = PredictionTask::new(
                &format!("{CLUSTER_TASK}_permuted"),
                "cluster",
                TaskKind::Binary,
                InputMode::ThermalOnly,
            );
            let targets: Vec<Option<f64>> = ids.iter().map(cluster_target).collect();
            let permuted = permute_targets(&targets, derive_seed(pc.predictor.seed, 0x9e47));
            let (e, log) = entry(&task, run(&task, &permuted))?;
            results.push(e);
            if let Some(l) = log {
                logs.insert(task.name.clone(), l);
            }
        }

        write_eval_results(&dir.join("eval_results.json"), &results)?;
        write_json(&dir.join("training_logs.json"), &logs)?;
        let inputs = [
            self.manifest_path(),
            self.dir(Stage::Segment).join("provenance.json"),
            self.dir(Stage::Profile).join("risk_profiles.json"),
            self.dir(Stage::Cluster).join("assignments.csv"),
        ];
        self.provenance(Stage::Predict, pc.predictor.seed, &inputs)
    }
}
