//! Semantic image compression toolkit.
//!
//! Disentangles an image into an extremely compressed reference payload,
//! entropy-coded text descriptions, and losslessly coded semantic masks,
//! packed into a single `.sdc` container. Decoding restores the image
//! object-by-object with attention-guided denoising on top of the
//! reference, using pluggable model backends (deterministic mocks are
//! built in, HTTP adapters reach real captioner/detector/segmenter/
//! denoiser services).
//!
//! Layout:
//! - [`container`]: the `.sdc` wire format and bpp accounting
//! - [`text_codec`]: canonical Huffman coding of text sections
//! - [`mask_codec`]: run-length/raw coding of binary masks
//! - [`ref_codec`]: the built-in TINY reference-image codec plus a codec registry
//! - [`guidance`]: attention-energy math used during guided denoising
//! - [`model_clients`]: backend traits, deterministic mocks, HTTP adapters
//! - [`encoder`]: rate policy and end-to-end container assembly
//! - [`decoder`]: the multi-stage semantic decoding loop

pub mod container;
pub mod decoder;
pub mod encoder;
pub mod fixtures;
pub mod guidance;
pub mod imageio;
pub mod mask_codec;
pub mod model_clients;
pub mod ref_codec;
pub mod selftest;
pub mod text_codec;

mod varint;

pub use container::SemanticContainer;
pub use imageio::Image;
