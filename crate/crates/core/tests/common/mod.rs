//! Seeded generators and element-wise oracles shared by the integration tests.
#![allow(dead_code)]

use mha_tucker::{DenseTensor, SharedTucker};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// `rows × cols` matrix with orthonormal columns (modified Gram–Schmidt, twice).
pub fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
    assert!(cols <= rows);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    DenseTensor::from_fn(&[rows, cols], |ix| basis[ix[1]][ix[0]])
}

/// Element-wise mode-`n` product by explicit index loops.
pub fn mode_product_loops(t: &DenseTensor, b: &DenseTensor, mode: usize) -> DenseTensor {
    let mut shape = t.shape().to_vec();
    let extent = shape[mode];
    shape[mode] = b.rows();
    DenseTensor::from_fn(&shape, |ix| {
        let mut src = ix.to_vec();
        let j = ix[mode];
        let mut acc = 0.0;
        for i in 0..extent {
            src[mode] = i;
            acc += t.get(&src).unwrap() * b.at(j, i);
        }
        acc
    })
}

/// `W_all[i1,i2,i3,i4] = Σ_{r1,r2,r3} G[r1,r2,r3,i4]·U1[i1,r1]·U2[i2,r2]·U3[i3,r3]`.
pub fn shared_reconstruct_loops(st: &SharedTucker) -> DenseTensor {
    let [d, v, s, h] = st.full_shape();
    let cs = st.cores.shape().to_vec();
    DenseTensor::from_fn(&[d, v, s, h], |ix| {
        let mut acc = 0.0;
        for r1 in 0..cs[0] {
            for r2 in 0..cs[1] {
                for r3 in 0..cs[2] {
                    acc += st.cores.get(&[r1, r2, r3, ix[3]]).unwrap()
                        * st.u1.at(ix[0], r1)
                        * st.u2.at(ix[1], r2)
                        * st.u3.at(ix[2], r3);
                }
            }
        }
        acc
    })
}

/// Random shared-factor model with orthonormal factors and a Gaussian core.
pub fn random_shared(dims: [usize; 4], ranks: [usize; 3], rng: &mut ChaCha8Rng) -> SharedTucker {
    let u1 = orthonormal(dims[0], ranks[0], rng);
    let u2 = orthonormal(dims[1], ranks[1], rng);
    let u3 = orthonormal(dims[2], ranks[2], rng);
    let cores = gaussian(&[ranks[0], ranks[1], ranks[2], dims[3]], rng);
    SharedTucker::new(u1, u2, u3, cores).unwrap()
}

pub fn rel_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if den == 0.0 { num } else { num / den }
}
