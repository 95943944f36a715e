//! Binary tensor exchange, artifact persistence and the external-logits
//! import path.

pub mod artifacts;
pub mod exchange;
pub mod external;

pub use artifacts::{read_dataset, read_params, read_subspace, write_dataset, write_params, write_subspace};
pub use exchange::{
    decode_container, decode_tensor, encode_container, encode_tensor, read_container, read_tensor, write_container,
    write_tensor,
};
pub use external::{export_logits, import_external_logits, ExternalCalibration};
