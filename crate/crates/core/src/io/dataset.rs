use std::path::Path;

use super::binary::{Decoder, Encoder};
use super::{write_atomic, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::noddi::PhantomDataset;

pub const DATASET_MAGIC: &[u8; 8] = b"QNODDIDS";

/// Serializes a dataset: header and shell table, mask bitmap, the three
/// parameter planes, one signal plane per direction, noise scale and seed.
pub fn encode_dataset(data: &PhantomDataset) -> Result<Vec<u8>> {
    let mut e = Encoder::new(DATASET_MAGIC, FORMAT_VERSION);
    e.len_u32(data.height())?;
    e.len_u32(data.width())?;
    e.scheme(data.scheme())?;
    e.bits(data.mask());
    for plane in data.maps() {
        e.f64s(plane);
    }
    let ndir = data.scheme().total_directions();
    let signals = data.signals();
    for d in 0..ndir {
        for v in 0..data.num_voxels() {
            e.f64(signals[v * ndir + d]);
        }
    }
    e.f64(data.noise_sigma());
    e.u64(data.seed());
    Ok(e.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PhantomDataset> {
    let mut d = Decoder::new(bytes, DATASET_MAGIC, FORMAT_VERSION, "dataset")?;
    let height = d.usize()?;
    let width = d.usize()?;
    let n = height
        .checked_mul(width)
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::format("invalid grid size"))?;
    let scheme = d.scheme()?;
    let mask = d.bits(n)?;
    let maps = [d.f64s(n)?, d.f64s(n)?, d.f64s(n)?];
    let ndir = scheme.total_directions();
    let planes = d.f64s(n.checked_mul(ndir).ok_or_else(|| Error::format("length overflow"))?)?;
    let mut signals = vec![0.0; n * ndir];
    for dir in 0..ndir {
        for v in 0..n {
            signals[v * ndir + dir] = planes[dir * n + v];
        }
    }
    let sigma = d.f64()?;
    let seed = d.u64()?;
    d.finish()?;
    if signals.iter().any(|s| !s.is_finite()) || maps.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::format("non-finite values in dataset"));
    }
    PhantomDataset::from_parts(height, width, mask, maps, signals, scheme, sigma, seed).map_err(|e| match e {
        Error::Format(_) => e,
        other => Error::format(other.to_string()),
    })
}

pub fn write_dataset(path: impl AsRef<Path>, data: &PhantomDataset) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(data)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PhantomDataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noddi::generate_phantom;
    use crate::scheme::generate_uniform_scheme;

    fn sample() -> PhantomDataset {
        let s = generate_uniform_scheme(&[7, 9], &[1000.0, 2000.0], 2).unwrap();
        generate_phantom(17, 19, &s, 0.02, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let data = sample();
        let bytes = encode_dataset(&data).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.maps(), data.maps());
        assert_eq!(back.mask(), data.mask());
        assert_eq!(back.scheme(), data.scheme());
        assert_eq!(
            back.signals().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.signals().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!((back.noise_sigma(), back.seed()), (0.02, 3));
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode_dataset(b"QNODDIDSxxxxxxxxx"), Err(Error::Format(_))));
        assert!(matches!(decode_dataset(b"garbage"), Err(Error::Format(_))));
    }

    #[test]
    fn atomic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let data = sample();
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap().maps(), data.maps());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
