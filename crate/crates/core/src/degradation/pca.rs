use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::operators::{make_gaussian_kernel, BlurKernel, RadiusPolicy};

/// Length of the kernel codes used for multiple-degradation conditioning.
pub const KERNEL_CODE_LEN: usize = 10;

/// Top principal components of a family of flattened kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    /// Side of the common square support.
    pub support: usize,
    pub mean: Vec<f64>,
    /// Row `i` is the `i`-th component, unit norm, decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCode {
    pub coeffs: Vec<f64>,
    pub basis_id: String,
}

/// Gaussian kernels for `sigma = low, low + step, ...` up to `high`.
pub fn gaussian_family(low: f64, high: f64, step: f64) -> Result<Vec<BlurKernel>> {
    if !(step > 0.0) || !(low <= high) {
        return Err(invalid("sigma grid needs low <= high and a positive step"));
    }
    let n = ((high - low) / step + 1e-9).floor() as usize + 1;
    (0..n)
        .map(|i| make_gaussian_kernel(low + i as f64 * step, RadiusPolicy::ThreeSigma))
        .collect()
}

fn fingerprint(values: impl Iterator<Item = f64>) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

pub fn pca_fit(kernels: &[BlurKernel], dim: usize) -> Result<KernelBasis> {
    if dim == 0 || kernels.len() < dim {
        return Err(invalid(format!(
            "PCA with {dim} components needs at least {dim} kernels, got {}",
            kernels.len()
        )));
    }
    let support = kernels.iter().map(BlurKernel::size).max().unwrap();
    let n = support * support;
    let rows: Vec<Vec<f64>> = kernels
        .iter()
        .map(|k| k.padded_taps(support))
        .collect::<Result<_>>()?;
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / m).collect();
    let centered = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c] - mean[c]);
    let cov = centered.transpose() * &centered / m;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let components: Vec<Vec<f64>> = order[..dim]
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i);
            // Sign convention: largest-magnitude entry positive.
            let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|x| x * sign).collect()
        })
        .collect();
    let variances = order[..dim].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let id = fingerprint(mean.iter().chain(components.iter().flatten()).copied());
    Ok(KernelBasis {
        support,
        mean,
        components,
        variances,
        id,
    })
}

pub fn pca_encode(h: &BlurKernel, basis: &KernelBasis) -> Result<KernelCode> {
    basis.encode_taps(&h.padded_taps(basis.support)?)
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Projects flattened `support x support` taps onto the basis.
    pub fn encode_taps(&self, taps: &[f64]) -> Result<KernelCode> {
        if taps.len() != self.mean.len() {
            return Err(invalid(format!(
                "expected {} taps, got {}",
                self.mean.len(),
                taps.len()
            )));
        }
        let centered: Vec<f64> = taps.iter().zip(&self.mean).map(|(t, m)| t - m).collect();
        let coeffs = self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect();
        Ok(KernelCode {
            coeffs,
            basis_id: self.id.clone(),
        })
    }

    /// Flattened `support x support` kernel from the first `components`
    /// coefficients of `code`.
    pub fn decode_truncated(&self, code: &KernelCode, components: usize) -> Result<Vec<f64>> {
        if code.basis_id != self.id {
            return Err(invalid("kernel code was produced by a different basis"));
        }
        if components > code.coeffs.len() || code.coeffs.len() != self.dim() {
            return Err(invalid("kernel code length does not match the basis"));
        }
        let mut out = self.mean.clone();
        for (c, comp) in code.coeffs.iter().zip(&self.components).take(components) {
            for (o, v) in out.iter_mut().zip(comp) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    pub fn decode(&self, code: &KernelCode) -> Result<Vec<f64>> {
        self.decode_truncated(code, self.dim())
    }
}
