use std::path::Path;

use super::binary::{Decoder, Encoder};
use super::{write_atomic, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::noddi::PhantomDataset;
use crate::shbasis::{num_coefficients, ShFitter};

pub const SH_MAPS_MAGIC: &[u8; 8] = b"QNODDISH";

/// Per-voxel SH coefficients of every shell of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficientMaps {
    pub height: usize,
    pub width: usize,
    pub order: usize,
    pub lambda: f64,
    pub b_values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Voxel-major: voxel `v` owns `coefficients[v * w .. (v + 1) * w]`
    /// with `w = shells × coefficients per shell`.
    pub coefficients: Vec<f64>,
}

impl ShCoefficientMaps {
    pub fn feature_width(&self) -> usize {
        self.b_values.len() * num_coefficients(self.order)
    }
}

/// Fits every foreground voxel; background voxels get zero coefficients.
pub fn fit_sh_maps(data: &PhantomDataset, order: usize, lambda: f64) -> Result<ShCoefficientMaps> {
    let fitter = ShFitter::new(data.scheme(), order, lambda)?;
    let w = fitter.feature_width();
    let mut coefficients = vec![0.0; data.num_voxels() * w];
    for v in data.foreground() {
        fitter.fit_flat_into(data.voxel_signal(v), &mut coefficients[v * w..(v + 1) * w]);
    }
    Ok(ShCoefficientMaps {
        height: data.height(),
        width: data.width(),
        order,
        lambda,
        b_values: data.scheme().b_values(),
        mask: data.mask().to_vec(),
        coefficients,
    })
}

fn encode(maps: &ShCoefficientMaps) -> Result<Vec<u8>> {
    let mut e = Encoder::new(SH_MAPS_MAGIC, FORMAT_VERSION);
    e.len_u32(maps.height)?;
    e.len_u32(maps.width)?;
    e.len_u32(maps.order)?;
    e.f64(maps.lambda);
    e.len_u32(maps.b_values.len())?;
    e.f64s(&maps.b_values);
    e.bits(&maps.mask);
    e.f64s(&maps.coefficients);
    Ok(e.finish())
}

pub fn write_sh_maps(path: impl AsRef<Path>, maps: &ShCoefficientMaps) -> Result<()> {
    write_atomic(path.as_ref(), &encode(maps)?)
}

pub fn read_sh_maps(path: impl AsRef<Path>) -> Result<ShCoefficientMaps> {
    let bytes = std::fs::read(path)?;
    let mut d = Decoder::new(&bytes, SH_MAPS_MAGIC, FORMAT_VERSION, "SH coefficient")?;
    let height = d.usize()?;
    let width = d.usize()?;
    let order = d.usize()?;
    let lambda = d.f64()?;
    let shells = d.usize()?;
    if order % 2 != 0 || order > 32 || shells > 64 {
        return Err(Error::format("invalid SH map header"));
    }
    let b_values = d.f64s(shells)?;
    let n = height.checked_mul(width).ok_or_else(|| Error::format("invalid grid size"))?;
    let mask = d.bits(n)?;
    let coefficients = d.f64s(n * shells * num_coefficients(order))?;
    d.finish()?;
    Ok(ShCoefficientMaps {
        height,
        width,
        order,
        lambda,
        b_values,
        mask,
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noddi::generate_phantom;
    use crate::scheme::generate_uniform_scheme;

    #[test]
    fn fit_and_round_trip() {
        let s = generate_uniform_scheme(&[20, 20], &[1000.0, 2000.0], 2).unwrap();
        let data = generate_phantom(16, 16, &s, 0.0, 1).unwrap();
        let maps = fit_sh_maps(&data, 6, 0.006).unwrap();
        let v = data.foreground()[0];
        // constant term of a positive signal is positive
        assert!(maps.coefficients[v * maps.feature_width()] > 0.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        write_sh_maps(&p, &maps).unwrap();
        assert_eq!(read_sh_maps(&p).unwrap(), maps);
    }
}
