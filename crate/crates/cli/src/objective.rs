use glso_core::eval_env::Evaluator;
use glso_core::grammar::DesignGraph;
use glso_core::latent_opt::LatentObjective;
use glso_core::vae::{DecodeMode, GraphVae};

/// Decodes latent points deterministically and scores the resulting design.
pub struct DecodedObjective {
    pub model: GraphVae<f32>,
    pub evaluator: Evaluator,
    last: Option<DesignGraph>,
}

impl DecodedObjective {
    pub fn new(model: GraphVae<f32>, evaluator: Evaluator) -> Self {
        Self {
            model,
            evaluator,
            last: None,
        }
    }

    pub fn decode(&self, z: &[f64]) -> Option<DesignGraph> {
        let z32: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        self.model
            .decode(&z32, DecodeMode::Deterministic)
            .ok()
            .map(|g| g.canonicalize())
    }
}

impl LatentObjective for DecodedObjective {
    fn design(&mut self, z: &[f64]) -> Option<String> {
        self.last = self.decode(z);
        self.last.as_ref().map(|g| g.canonical_key())
    }

    fn score(&mut self, _z: &[f64], _design: Option<&str>) -> Result<f64, String> {
        let g = self.last.as_ref().ok_or("latent point did not decode")?;
        self.evaluator
            .evaluate(g)
            .map(|s| s.value)
            .map_err(|e| e.to_string())
    }
}
