//! Corpus scanning, the source/target pairing protocol, the external
//! converter client and train/test splitting.

pub mod converter;
pub mod corpus;
pub mod manifest;
pub mod synth;

pub use converter::{convert_manifest, invoke_converter, ConverterCommand};
pub use corpus::{scan_corpus, CorpusIndex, DEFAULT_EXCLUDE};
pub use manifest::{
    build_pairing_manifest, default_test_size, split_train_test, ManifestHeader, PairingManifest,
    PairingRecord, Split,
};
