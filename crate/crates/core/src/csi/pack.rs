//! Pack file: a self-describing binary dataset container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "WDPK" | version u32 | dtype u8 | rank u8 | sample_shape u32×rank | N u64
//!        | C u32 | labels u32×N | samples (row-major floats) | manifest (u32 len + JSON)
//! ```

use std::path::Path;

use super::{LabeledDataset, Manifest};
use crate::binio::{put_blob, put_u32, put_u64, read_file, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{numel, Tensor};

pub const PACK_MAGIC: &[u8; 4] = b"WDPK";
pub const PACK_VERSION: u32 = 1;

pub fn encode_pack<T: Scalar>(ds: &LabeledDataset<T>) -> Result<Vec<u8>> {
    let shape = ds.sample_shape();
    let mut out = Vec::with_capacity(32 + ds.len() * 4 + ds.samples().len() * T::DTYPE.byte_width());
    out.extend_from_slice(PACK_MAGIC);
    put_u32(&mut out, PACK_VERSION);
    out.push(T::DTYPE.code());
    out.push(u8::try_from(shape.len()).map_err(|_| Error::InvalidShape("rank above 255".into()))?);
    for &d in shape {
        put_u32(&mut out, d as u32);
    }
    put_u64(&mut out, ds.len() as u64);
    put_u32(&mut out, ds.class_count() as u32);
    for &l in ds.labels() {
        put_u32(&mut out, l as u32);
    }
    for &v in ds.samples().data() {
        v.write_le(&mut out);
    }
    put_blob(&mut out, &serde_json::to_vec(ds.manifest())?);
    Ok(out)
}

pub fn decode_pack<T: Scalar>(bytes: &[u8]) -> Result<LabeledDataset<T>> {
    if bytes.len() < 4 || &bytes[..4] != PACK_MAGIC {
        return Err(Error::NotAPackFile);
    }
    let mut r = Reader::new(&bytes[4..], Error::TruncatedPack);
    let version = r.u32("version")?;
    if version != PACK_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "pack",
            found: version,
            expected: PACK_VERSION,
        });
    }
    let code = r.u8("dtype")?;
    let dtype = DType::from_code(code)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown dtype code {code}")))?;
    let rank = r.u8("rank")? as usize;
    let shape = (0..rank)
        .map(|_| r.u32("sample shape").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = r.u64("sample count")?;
    let classes = r.u32("class count")? as usize;

    let label_bytes = r.take(r.span(n, 4, "labels")?, "labels")?;
    let labels: Vec<usize> = label_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();

    let per_sample = numel(&shape);
    let count = r.span(n, per_sample, "samples")?;
    let width = dtype.byte_width();
    let sample_bytes = r.take(
        count
            .checked_mul(width)
            .ok_or_else(|| Error::TruncatedPack("sample payload overflows".into()))?,
        "samples",
    )?;
    let data: Vec<T> = sample_bytes
        .chunks_exact(width)
        .map(|b| T::read_le(dtype, b))
        .collect();

    let manifest: Manifest = serde_json::from_slice(r.blob("manifest")?)
        .map_err(|e| Error::TruncatedPack(format!("manifest: {e}")))?;
    if manifest.class_count != classes || manifest.sample_shape != shape {
        return Err(Error::InvalidArgument(format!(
            "pack header ({classes} classes, shape {shape:?}) disagrees with manifest ({} classes, shape {:?})",
            manifest.class_count, manifest.sample_shape
        )));
    }
    let mut full = vec![labels.len()];
    full.extend_from_slice(&shape);
    LabeledDataset::new(Tensor::new(full, data)?, labels, manifest)
}

pub fn save_pack<T: Scalar>(ds: &LabeledDataset<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pack(ds)?)
}

pub fn load_pack<T: Scalar>(path: &Path) -> Result<LabeledDataset<T>> {
    decode_pack(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn fixture(n: usize) -> LabeledDataset<f32> {
        let data: Vec<f32> = (0..n * 6).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut m = Manifest::new(3, vec![2, 3], "train", "unit test");
        m.extra.insert("spc".into(), serde_json::json!(10));
        LabeledDataset::new(
            Tensor::new(vec![n, 2, 3], data).unwrap(),
            (0..n).map(|i| i % 3).collect(),
            m,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ds = fixture(10);
        let back: LabeledDataset<f32> = decode_pack(&encode_pack(&ds).unwrap()).unwrap();
        assert!(back.samples().bit_eq(ds.samples()));
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.manifest(), ds.manifest());
    }

    #[test]
    fn float_manifest_reencodes_to_the_same_bytes() {
        let mut ds = fixture(4);
        let mut m = ds.manifest().clone();
        let floats: Vec<f64> = (1..20).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect();
        m.extra.insert("floats".into(), serde_json::json!(floats));
        ds = ds.with_manifest(m).unwrap();
        let bytes = encode_pack(&ds).unwrap();
        let back: LabeledDataset<f32> = decode_pack(&bytes).unwrap();
        assert_eq!(back.manifest(), ds.manifest());
        assert_eq!(encode_pack(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode_pack(&fixture(4)).unwrap();
        for b in &mut bytes[..8] {
            *b ^= 0xff;
        }
        let err = decode_pack::<f32>(&bytes).unwrap_err();
        assert!(matches!(err, Error::NotAPackFile));
        assert_eq!(err.to_string(), "not a pack file");
    }

    #[test]
    fn missing_sample_is_truncation() {
        let ds = fixture(10);
        let full = encode_pack(&ds).unwrap();
        // Drop the last sample (6 × f32) but keep the manifest blob.
        let manifest_len = serde_json::to_vec(ds.manifest()).unwrap().len() + 4;
        let cut = full.len() - manifest_len;
        let mut bytes = full[..cut - 24].to_vec();
        bytes.extend_from_slice(&full[cut..]);
        let err = decode_pack::<f32>(&bytes).unwrap_err();
        assert!(matches!(err, Error::TruncatedPack(_)), "{err}");
        assert!(err.to_string().starts_with("truncated pack"));
    }

    #[test]
    fn unsupported_version_is_reported() {
        let mut bytes = encode_pack(&fixture(2)).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = decode_pack::<f32>(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 7, .. }));
    }

    #[test]
    fn f64_payload_loads_into_f64() {
        let ds = fixture(3).cast::<f64>();
        let bytes = encode_pack(&ds).unwrap();
        assert_eq!(bytes[8], DType::Float64.code());
        let back: LabeledDataset<f64> = decode_pack(&bytes).unwrap();
        assert!(back.samples().bit_eq(ds.samples()));
    }

    proptest! {
        #[test]
        fn roundtrip_arbitrary(values in prop::collection::vec(-1e6f32..1e6, 1..40), classes in 2usize..5) {
            let n = values.len();
            let ds = LabeledDataset::new(
                Tensor::new(vec![n, 1], values).unwrap(),
                (0..n).map(|i| i % classes).collect(),
                Manifest::new(classes, vec![1], "x", "prop"),
            ).unwrap();
            let back: LabeledDataset<f32> = decode_pack(&encode_pack(&ds).unwrap()).unwrap();
            prop_assert!(back.samples().bit_eq(ds.samples()));
            prop_assert_eq!(back.labels(), ds.labels());
            prop_assert_eq!(back.manifest(), ds.manifest());
        }
    }
}
