//! Training state persisted as safetensors with JSON metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use micgraph_core::model::{Model, ModelConfig};
use micgraph_core::optim::{Adam, AdamConfig};
use micgraph_core::signal::StftParams;
use micgraph_core::train::{TrainConfig, Trainer};
use micgraph_core::Tensor;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

const FORMAT: &str = "micgraph-checkpoint-1";

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub train: TrainConfig,
    pub stft: StftParams,
    /// Microphones of the training data.
    pub mics: usize,
    pub best_dev: Option<f64>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f32>, stft: StftParams, mics: usize, best_dev: Option<f64>) -> Self {
        Self {
            model: trainer.model.clone(),
            optimizer: trainer.optimizer.clone(),
            train: trainer.config.clone(),
            stft,
            mics,
            best_dev,
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn into_trainer(self) -> Result<Trainer<f32>> {
        let mut t = Trainer::new(self.model, self.train)?;
        t.optimizer = self.optimizer;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let groups: [(&str, &BTreeMap<String, Tensor<f32>>); 4] = [
            ("param", &self.model.params),
            ("buffer", &self.model.buffers),
            ("adam_m", &self.optimizer.m),
            ("adam_v", &self.optimizer.v),
        ];
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = groups
            .iter()
            .flat_map(|(prefix, map)| {
                map.iter().map(move |(name, t)| {
                    let data = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                    (format!("{prefix}/{name}"), t.shape().to_vec(), data)
                })
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, shape, data)| Ok((name.as_str(), TensorView::new(Dtype::F32, shape.clone(), data)?)))
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([
            ("format".to_string(), FORMAT.to_string()),
            ("version".to_string(), crate::version()),
            ("model_config".to_string(), serde_json::to_string(&self.model.config)?),
            ("train_config".to_string(), serde_json::to_string(&self.train)?),
            ("adam".to_string(), serde_json::to_string(&self.optimizer.config)?),
            ("stft".to_string(), serde_json::to_string(&self.stft)?),
            ("step".to_string(), self.optimizer.step.to_string()),
            ("mics".to_string(), self.mics.to_string()),
            ("best_dev".to_string(), serde_json::to_string(&self.best_dev)?),
        ]);
        // write then rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        safetensors::serialize_to_file(views, &Some(meta), &tmp)
            .with_context(|| format!("cannot write checkpoint {}", tmp.display()))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        if meta.get("format").map(String::as_str) != Some(FORMAT) {
            bail!("{} is not a micgraph checkpoint", path.display());
        }
        let field = |k: &str| meta.get(k).ok_or_else(|| anyhow!("checkpoint metadata lacks `{k}`"));
        let model_config: ModelConfig = serde_json::from_str(field("model_config")?)?;
        let train: TrainConfig = serde_json::from_str(field("train_config")?)?;
        let adam: AdamConfig = serde_json::from_str(field("adam")?)?;
        let stft: StftParams = serde_json::from_str(field("stft")?)?;
        let step: u64 = field("step")?.parse()?;
        let mics: usize = field("mics")?.parse()?;
        let best_dev: Option<f64> = serde_json::from_str(field("best_dev")?)?;

        let st = SafeTensors::deserialize(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let mut groups: HashMap<&str, BTreeMap<String, Tensor<f32>>> = HashMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                bail!("tensor {name} has dtype {:?}, expected F32", view.dtype());
            }
            let (prefix, key) = name.split_once('/').ok_or_else(|| anyhow!("unexpected tensor name {name}"))?;
            let prefix = match prefix {
                "param" => "param",
                "buffer" => "buffer",
                "adam_m" => "adam_m",
                "adam_v" => "adam_v",
                _ => bail!("unexpected tensor group in {name}"),
            };
            let data = view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let t = Tensor::from_vec(view.shape(), data)?;
            groups.entry(prefix).or_default().insert(key.to_string(), t);
        }
        let mut take = |k| groups.remove(k).unwrap_or_default();
        let model = Model::from_parts(model_config, take("param"), take("buffer"))?;
        let optimizer = Adam { config: adam, step, m: take("adam_m"), v: take("adam_v") };
        Ok(Self { model, optimizer, train, stft, mics, best_dev })
    }
}
