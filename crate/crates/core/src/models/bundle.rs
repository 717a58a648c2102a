use std::path::Path;

use cyclexplain_stats::describe::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{read_meta, save_atomic, Checkpoint};
use super::{Classifier, ClassifierSpec, Discriminator, DiscriminatorSpec, EncoderSpec, Generator};
use crate::{CoreError, Result};

/// Everything needed to rebuild the networks of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub input_size: usize,
    pub classifier: ClassifierSpec,
    pub generator: EncoderSpec,
    pub discriminator: DiscriminatorSpec,
    pub seed: u64,
}

impl BundleSpec {
    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    spec: BundleSpec,
    fingerprint: String,
    trained: bool,
    classifier_checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierMeta {
    spec: ClassifierSpec,
    input_size: usize,
    checksum: String,
}

/// Two generators and two discriminators bound to a frozen classifier.
#[derive(Debug, Clone)]
pub struct ExplainerBundle {
    pub spec: BundleSpec,
    pub classifier: Classifier,
    pub g_plus: Generator,
    pub g_minus: Generator,
    pub d_plus: Discriminator,
    pub d_minus: Discriminator,
    pub trained: bool,
    classifier_checksum: String,
}

impl ExplainerBundle {
    pub fn new(classifier: Classifier, generator: &EncoderSpec, discriminator: &DiscriminatorSpec, seed: u64) -> Result<Self> {
        let size = classifier.input_size();
        let spec = BundleSpec {
            input_size: size,
            classifier: classifier.spec().clone(),
            generator: generator.clone(),
            discriminator: discriminator.clone(),
            seed,
        };
        let classifier_checksum = classifier.params().checksum()?;
        Ok(Self {
            g_plus: Generator::unet(generator, size, derive_seed(seed, 1))?,
            g_minus: Generator::unet(generator, size, derive_seed(seed, 2))?,
            d_plus: Discriminator::new(discriminator, size, derive_seed(seed, 3))?,
            d_minus: Discriminator::new(discriminator, size, derive_seed(seed, 4))?,
            spec,
            classifier,
            trained: false,
            classifier_checksum,
        })
    }

    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    /// Checksum of the classifier at binding time.
    pub fn bound_classifier_checksum(&self) -> &str {
        &self.classifier_checksum
    }

    /// Fails when the classifier parameters moved since binding.
    pub fn verify_classifier(&self) -> Result<()> {
        let now = self.classifier.params().checksum()?;
        if now != self.classifier_checksum {
            return Err(CoreError::State("classifier parameters changed after binding".into()));
        }
        Ok(())
    }

    pub fn require_trained(&self) -> Result<()> {
        if !self.trained {
            return Err(CoreError::State("explainer bundle has not been trained".into()));
        }
        Ok(())
    }

    /// The same bundle with the two generators exchanged.
    pub fn swapped(&self) -> Self {
        let mut b = self.clone();
        std::mem::swap(&mut b.g_plus, &mut b.g_minus);
        b
    }

    fn stores(&self) -> Result<Checkpoint<'_>> {
        let gp = trainable_params(&self.g_plus)?;
        let gm = trainable_params(&self.g_minus)?;
        Ok(Checkpoint::new(vec![
            ("classifier", self.classifier.params()),
            ("g_plus", gp),
            ("g_minus", gm),
            ("d_plus", self.d_plus.params()),
            ("d_minus", self.d_minus.params()),
        ]))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = BundleMeta {
            spec: self.spec.clone(),
            fingerprint: self.fingerprint(),
            trained: self.trained,
            classifier_checksum: self.classifier_checksum.clone(),
        };
        save_atomic(dir, &meta, &self.stores()?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: BundleMeta = read_meta(dir)?;
        if meta.fingerprint != meta.spec.fingerprint() {
            return Err(CoreError::Checkpoint(format!("{}: fingerprint does not match spec", dir.display())));
        }
        let classifier = Classifier::new(&meta.spec.classifier, meta.spec.input_size, 0)?;
        let mut b = Self::new(classifier, &meta.spec.generator, &meta.spec.discriminator, meta.spec.seed)?;
        b.stores()?.load(dir)?;
        b.classifier_checksum = b.classifier.params().checksum()?;
        if b.classifier_checksum != meta.classifier_checksum {
            return Err(CoreError::Checkpoint(format!("{}: classifier checksum mismatch", dir.display())));
        }
        b.trained = meta.trained;
        Ok(b)
    }
}

fn trainable_params(g: &Generator) -> Result<&crate::nn::ParamStore> {
    g.params().ok_or_else(|| CoreError::State("identity generators cannot be checkpointed".into()))
}

impl Classifier {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = ClassifierMeta {
            spec: self.spec().clone(),
            input_size: self.input_size(),
            checksum: self.params().checksum()?,
        };
        save_atomic(dir, &meta, &Checkpoint::new(vec![("classifier", self.params())]))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ClassifierMeta = read_meta(dir)?;
        let c = Classifier::new(&meta.spec, meta.input_size, 0)?;
        Checkpoint::new(vec![("classifier", c.params())]).load(dir)?;
        if c.params().checksum()? != meta.checksum {
            return Err(CoreError::Checkpoint(format!("{}: classifier checksum mismatch", dir.display())));
        }
        Ok(c)
    }
}
