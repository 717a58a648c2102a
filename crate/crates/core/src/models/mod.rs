//! Classifier, generator and discriminator networks.

mod bundle;
mod checkpoint;
mod classifier;
mod discriminator;
mod encoder;
mod generator;

pub use bundle::{BundleSpec, ExplainerBundle};
pub use checkpoint::{read_meta, save_atomic, Checkpoint, META_FILE};
pub use classifier::{Classifier, ClassifierSpec};
pub use discriminator::{adversarial_loss, Discriminator, DiscriminatorSpec, SlotPermutation, Slot};
pub use encoder::EncoderSpec;
pub use generator::{Generator, UNet};
