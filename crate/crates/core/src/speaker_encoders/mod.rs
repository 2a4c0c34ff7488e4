//! Timbre encoders: a frozen fixed-size encoder producing one unit vector per
//! speaker, and the trainable multi-reference encoder producing one
//! embedding per generated frame by attending over reference audio.

mod fixed;
mod multi_ref;

pub use fixed::{
    fixed_embed, ExternalEmbeddings, FixedBackend, ReferenceMel, SpeakerEmbedding, StatsProjector,
    FIXED_EMBED_DIM, FIXED_PROJECTION_SEED,
};
pub use multi_ref::{
    Attended, FlattenedReferenceSequence, MultiRefConfig, MultiRefEncoder, MIN_REFERENCE_FRAMES,
};
