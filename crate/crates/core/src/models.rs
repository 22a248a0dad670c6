//! Three-branch predicate predictor and the adversarial discriminator heads.
//!
//! The union branch runs the extractor `F` (two ReLU layers) to obtain
//! `f_u`, followed by a linear head; the human and spatial branches are
//! linear heads on their raw inputs. Each branch yields per-predicate
//! sigmoid probabilities, combined as `(s_h + s_u) * s_sp`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BranchInputs;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numeric::{Graph, ParamId, ParamStore, Tensor, Var};

pub const EMBEDDING_DIM: usize = 50;
const CHECKPOINT_FORMAT: &str = "adglab-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Which adversarial head the model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorKind {
    None,
    /// Softmax over domains from `f_u`.
    Adg,
    /// Softmax over domains from `f_u ⊕ e_pred`.
    CadgKld,
    /// Sigmoid from `f_u ⊕ e_obj ⊕ e_pred`.
    CadgJsd,
}

/// Where the discriminator reads the union-branch representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapPoint {
    /// Output of `F`, the input of the union head.
    #[default]
    PreHead,
    /// Output of the first extractor layer.
    Hidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub human_dim: usize,
    pub union_dim: usize,
    pub spatial_dim: usize,
    pub num_predicates: usize,
    pub num_objects: usize,
    #[serde(default = "default_width")]
    pub hidden_dim: usize,
    #[serde(default = "default_width")]
    pub feature_dim: usize,
    pub discriminator: DiscriminatorKind,
    /// Width of an optional hidden ReLU layer in the discriminator.
    #[serde(default)]
    pub discriminator_hidden: Option<usize>,
    #[serde(default)]
    pub tap: TapPoint,
}

fn default_width() -> usize {
    64
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("human_dim", self.human_dim),
            ("union_dim", self.union_dim),
            ("spatial_dim", self.spatial_dim),
            ("num_predicates", self.num_predicates),
            ("num_objects", self.num_objects),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Validation(format!("model {name} must be positive")));
            }
        }
        if self.discriminator_hidden == Some(0) {
            return Err(Error::Validation("discriminator_hidden must be positive when set".into()));
        }
        Ok(())
    }

    /// Width of the representation seen by the discriminator.
    pub fn tap_dim(&self) -> usize {
        match self.tap {
            TapPoint::PreHead => self.feature_dim,
            TapPoint::Hidden => self.hidden_dim,
        }
    }

    fn discriminator_io(&self) -> Option<(usize, usize)> {
        let f = self.tap_dim();
        match self.discriminator {
            DiscriminatorKind::None => None,
            DiscriminatorKind::Adg => Some((f, self.num_objects)),
            DiscriminatorKind::CadgKld => Some((f + EMBEDDING_DIM, self.num_objects)),
            DiscriminatorKind::CadgJsd => Some((f + 2 * EMBEDDING_DIM, 1)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layout {
    extractor: [Layer; 2],
    union_head: Layer,
    human_head: Layer,
    spatial_head: Layer,
    predicate_embedding: ParamId,
    object_embedding: ParamId,
    discriminator: Vec<Layer>,
}

/// Per-predicate branch probabilities and the combined triplet score.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionScores {
    pub human: Vec<f64>,
    pub union: Vec<f64>,
    pub spatial: Vec<f64>,
}

impl PredictionScores {
    /// `(s_h + s_u) * s_sp`.
    pub fn triplet(&self) -> Vec<f64> {
        combine_triplet(&self.human, &self.union, &self.spatial)
    }

    /// `s_h * s_sp`, the score with the union branch removed.
    pub fn without_union(&self) -> Vec<f64> {
        self.human.iter().zip(&self.spatial).map(|(h, s)| h * s).collect()
    }
}

pub fn combine_triplet(human: &[f64], union: &[f64], spatial: &[f64]) -> Vec<f64> {
    human.iter().zip(union).zip(spatial).map(|((h, u), s)| (h + u) * s).collect()
}

/// Graph nodes produced by one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Representation read by the discriminator.
    pub tap: Var,
    pub human_logits: Var,
    pub union_logits: Var,
    pub spatial_logits: Var,
}

/// Row-stacked branch inputs of a batch.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub human: Tensor,
    pub union: Tensor,
    pub spatial: Tensor,
}

impl BatchInputs {
    pub fn stack<'a>(inputs: impl IntoIterator<Item = &'a BranchInputs>) -> Result<Self> {
        let (mut h, mut u, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for x in inputs {
            h.push(x.human.clone());
            u.push(x.union.clone());
            s.push(x.spatial.clone());
        }
        if h.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        Ok(Self { human: Tensor::from_rows(&h)?, union: Tensor::from_rows(&u)?, spatial: Tensor::from_rows(&s)? })
    }

    pub fn len(&self) -> usize {
        self.union.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
}

impl Model {
    /// Glorot-uniform weights, zero biases, embeddings uniform in ±0.1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let mut layer = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| Layer {
            w: store.add(format!("{name}.w"), glorot(&mut rng, fan_in, fan_out)),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
        };
        let extractor = [
            layer(&mut store, "extractor.0", c.union_dim, c.hidden_dim),
            layer(&mut store, "extractor.1", c.hidden_dim, c.feature_dim),
        ];
        let union_head = layer(&mut store, "union_head", c.feature_dim, c.num_predicates);
        let human_head = layer(&mut store, "human_head", c.human_dim, c.num_predicates);
        let spatial_head = layer(&mut store, "spatial_head", c.spatial_dim, c.num_predicates);
        let mut discriminator = Vec::new();
        if let Some((din, dout)) = c.discriminator_io() {
            match c.discriminator_hidden {
                Some(h) => {
                    discriminator.push(layer(&mut store, "discriminator.0", din, h));
                    discriminator.push(layer(&mut store, "discriminator.1", h, dout));
                }
                None => discriminator.push(layer(&mut store, "discriminator.0", din, dout)),
            }
        }
        let predicate_embedding =
            store.add("predicate_embedding", uniform(&mut rng, c.num_predicates, EMBEDDING_DIM, 0.1));
        let object_embedding = store.add("object_embedding", uniform(&mut rng, c.num_objects, EMBEDDING_DIM, 0.1));
        let layout = Layout {
            extractor,
            union_head,
            human_head,
            spatial_head,
            predicate_embedding,
            object_embedding,
            discriminator,
        };
        Ok(Self { config, store, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Extractor and the three branch heads.
    pub fn main_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        [l.extractor[0], l.extractor[1], l.union_head, l.human_head, l.spatial_head]
            .iter()
            .flat_map(|x| [x.w, x.b])
            .collect()
    }

    /// Extractor only.
    pub fn extractor_params(&self) -> Vec<ParamId> {
        self.layout.extractor.iter().flat_map(|x| [x.w, x.b]).collect()
    }

    /// Discriminator layers and the label embeddings feeding them.
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.layout.discriminator.iter().flat_map(|x| [x.w, x.b]).collect();
        match self.config.discriminator {
            DiscriminatorKind::CadgKld => ids.push(self.layout.predicate_embedding),
            DiscriminatorKind::CadgJsd => {
                ids.push(self.layout.object_embedding);
                ids.push(self.layout.predicate_embedding);
            }
            _ => {}
        }
        ids
    }

    fn apply(&self, g: &mut Graph, x: Var, layer: Layer) -> Result<Var> {
        let w = g.param(&self.store, layer.w)?;
        let b = g.param(&self.store, layer.b)?;
        Ok(g.linear(x, w, b)?)
    }

    /// Branch logits for a batch.
    pub fn forward(&self, g: &mut Graph, batch: &BatchInputs) -> Result<Forward> {
        self.check_dims(batch)?;
        let l = &self.layout;
        let xu = g.constant(batch.union.clone())?;
        let h1 = self.apply(g, xu, l.extractor[0])?;
        let h1 = g.relu(h1)?;
        let f2 = self.apply(g, h1, l.extractor[1])?;
        let f_u = g.relu(f2)?;
        let union_logits = self.apply(g, f_u, l.union_head)?;
        let xh = g.constant(batch.human.clone())?;
        let human_logits = self.apply(g, xh, l.human_head)?;
        let xs = g.constant(batch.spatial.clone())?;
        let spatial_logits = self.apply(g, xs, l.spatial_head)?;
        let tap = match self.config.tap {
            TapPoint::PreHead => f_u,
            TapPoint::Hidden => h1,
        };
        Ok(Forward { tap, human_logits, union_logits, spatial_logits })
    }

    fn check_dims(&self, batch: &BatchInputs) -> Result<()> {
        let c = &self.config;
        for (name, got, want) in [
            ("human", batch.human.cols(), c.human_dim),
            ("union", batch.union.cols(), c.union_dim),
            ("spatial", batch.spatial.cols(), c.spatial_dim),
        ] {
            if got != want {
                return Err(Error::Validation(format!("{name} features have {got} entries, model expects {want}")));
            }
        }
        Ok(())
    }

    fn run_discriminator(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let layers = &self.layout.discriminator;
        let mut x = input;
        for (j, &layer) in layers.iter().enumerate() {
            x = self.apply(g, x, layer)?;
            if j + 1 < layers.len() {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }

    fn expect(&self, kind: DiscriminatorKind) -> Result<()> {
        if self.config.discriminator == kind {
            Ok(())
        } else {
            Err(Error::Validation(format!("model carries a {:?} discriminator, not {kind:?}", self.config.discriminator)))
        }
    }

    fn check_ids(ids: &[usize], bound: usize, what: &str) -> Result<()> {
        match ids.iter().find(|&&v| v >= bound) {
            Some(v) => Err(Error::Validation(format!("{what} id {v} outside [0, {bound})"))),
            None => Ok(()),
        }
    }

    /// Domain logits `B x M` from the tapped representation.
    pub fn adg_logits(&self, g: &mut Graph, tap: Var) -> Result<Var> {
        self.expect(DiscriminatorKind::Adg)?;
        self.run_discriminator(g, tap)
    }

    /// Domain logits `B x M` from `tap ⊕ e_pred`, one predicate per row.
    pub fn cadg_kld_logits(&self, g: &mut Graph, tap: Var, predicates: &[usize]) -> Result<Var> {
        self.expect(DiscriminatorKind::CadgKld)?;
        Self::check_ids(predicates, self.config.num_predicates, "predicate")?;
        let table = g.param(&self.store, self.layout.predicate_embedding)?;
        let e = g.gather(table, predicates)?;
        let input = g.concat_cols(&[tap, e])?;
        self.run_discriminator(g, input)
    }

    /// Binary logits `B x 1` from `tap ⊕ e_obj ⊕ e_pred`, one pair per row.
    pub fn cadg_jsd_logits(&self, g: &mut Graph, tap: Var, objects: &[usize], predicates: &[usize]) -> Result<Var> {
        self.expect(DiscriminatorKind::CadgJsd)?;
        Self::check_ids(objects, self.config.num_objects, "object")?;
        Self::check_ids(predicates, self.config.num_predicates, "predicate")?;
        let ot = g.param(&self.store, self.layout.object_embedding)?;
        let eo = g.gather(ot, objects)?;
        let pt = g.param(&self.store, self.layout.predicate_embedding)?;
        let ep = g.gather(pt, predicates)?;
        let input = g.concat_cols(&[tap, eo, ep])?;
        self.run_discriminator(g, input)
    }

    /// Branch probabilities for a batch, one [`PredictionScores`] per row.
    pub fn predict_batch(&self, batch: &BatchInputs) -> Result<Vec<PredictionScores>> {
        let mut g = Graph::new();
        let fw = self.forward(&mut g, batch)?;
        let sh = g.sigmoid(fw.human_logits)?;
        let su = g.sigmoid(fw.union_logits)?;
        let ss = g.sigmoid(fw.spatial_logits)?;
        let (sh, su, ss) = (g.value(sh), g.value(su), g.value(ss));
        Ok((0..batch.len())
            .map(|r| PredictionScores {
                human: sh.row_slice(r).to_vec(),
                union: su.row_slice(r).to_vec(),
                spatial: ss.row_slice(r).to_vec(),
            })
            .collect())
    }

    pub fn predict(&self, x: &BranchInputs) -> Result<PredictionScores> {
        let batch = BatchInputs::stack([x])?;
        Ok(self.predict_batch(&batch)?.remove(0))
    }

    /// Tapped representation for one input.
    pub fn features(&self, x: &BranchInputs) -> Result<Vec<f64>> {
        let batch = BatchInputs::stack([x])?;
        let mut g = Graph::new();
        let fw = self.forward(&mut g, &batch)?;
        Ok(g.value(fw.tap).data().to_vec())
    }

    fn feature_constant(&self, g: &mut Graph, f_u: &[f64]) -> Result<Var> {
        if f_u.len() != self.config.tap_dim() {
            return Err(Error::Validation(format!(
                "feature has {} entries, discriminator expects {}",
                f_u.len(),
                self.config.tap_dim()
            )));
        }
        Ok(g.constant(Tensor::row(f_u.to_vec()))?)
    }

    /// Distribution over domains for a feature vector.
    pub fn discriminate_adg(&self, f_u: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let f = self.feature_constant(&mut g, f_u)?;
        let logits = self.adg_logits(&mut g, f)?;
        let p = g.softmax(logits)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Distribution over domains for a feature vector under a predicate.
    pub fn discriminate_cadg_kld(&self, f_u: &[f64], predicate: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let f = self.feature_constant(&mut g, f_u)?;
        let logits = self.cadg_kld_logits(&mut g, f, &[predicate])?;
        let p = g.softmax(logits)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Probability that `f_u` came from the `(object, predicate)` cell rather
    /// than the predicate's pooled distribution.
    pub fn discriminate_cadg_jsd(&self, f_u: &[f64], object: usize, predicate: usize) -> Result<f64> {
        let mut g = Graph::new();
        let f = self.feature_constant(&mut g, f_u)?;
        let logits = self.cadg_jsd_logits(&mut g, f, &[object], &[predicate])?;
        let p = g.sigmoid(logits)?;
        Ok(g.value(p).item()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.store.clone(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| Error::parse(path, e))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::parse(path, format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version)));
        }
        let reference = Model::new(ckpt.config.clone(), 0)?;
        if reference.layout != ckpt.layout || !same_shapes(&reference.store, &ckpt.params) {
            return Err(Error::parse(path, "parameter shapes do not match the stored config"));
        }
        if ckpt.params.entries().iter().any(|e| !e.value.is_finite()) {
            return Err(Error::parse(path, "non-finite parameter"));
        }
        Ok(Self { config: ckpt.config, store: ckpt.params, layout: ckpt.layout })
    }
}

fn same_shapes(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.entries().iter().zip(b.entries()).all(|(x, y)| x.name == y.name && x.value.shape() == y.value.shape())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    layout: Layout,
    params: ParamStore,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, fan_in, fan_out, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(rows, cols, data).expect("sizes agree")
}
