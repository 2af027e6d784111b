//! Model files: a container whose header carries the model config and its
//! shape table, and whose payload is the flat parameter vector.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::codec::{ByteReader, ByteWriter, CodecError, Container};
use crate::numkit::ParamSet;

#[derive(Serialize, Deserialize)]
struct ModelHeader<C> {
    config: C,
    shapes: Vec<(String, usize, usize)>,
}

pub fn encode_model<C: Serialize, P: ParamSet>(kind: &str, config: &C, params: &P) -> Container {
    let header = ModelHeader {
        config,
        shapes: params.shape_table(),
    };
    let mut w = ByteWriter::new();
    for v in params.flatten() {
        w.f64(v);
    }
    Container {
        kind: kind.to_string(),
        header: serde_json::to_string(&header).expect("model header serializes"),
        payload: w.into_inner(),
    }
}

/// Decode a model file: `build` turns the stored config into a zero model,
/// whose shape table must match the stored one exactly.
pub fn decode_model<C, P, F>(container: &Container, build: F) -> Result<(C, P), CodecError>
where
    C: DeserializeOwned,
    P: ParamSet,
    F: FnOnce(&C) -> Result<P, String>,
{
    let header: ModelHeader<C> =
        serde_json::from_str(&container.header).map_err(|e| CodecError::Malformed(format!("model header: {e}")))?;
    let mut model = build(&header.config).map_err(CodecError::Malformed)?;
    let expected = model.shape_table();
    if expected != header.shapes {
        return Err(CodecError::Malformed(format!(
            "shape table mismatch: file has {:?}, config implies {:?}",
            header.shapes, expected
        )));
    }
    let n = model.num_params();
    if container.payload.len() != n * 8 {
        return Err(CodecError::Truncated("model parameters"));
    }
    let mut r = ByteReader::new(&container.payload);
    let flat = (0..n).map(|_| r.f64("parameter")).collect::<Result<Vec<_>, _>>()?;
    model
        .assign_flat(&flat)
        .map_err(|e| CodecError::Malformed(e.to_string()))?;
    Ok((header.config, model))
}

pub fn save_model<C: Serialize, P: ParamSet>(
    path: &Path,
    kind: &str,
    config: &C,
    params: &P,
) -> Result<(), CodecError> {
    encode_model(kind, config, params).write(path)
}
