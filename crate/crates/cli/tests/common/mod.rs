//! Synthetic checkpoints, seeded generators and a runner for the binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use mha_tucker::container::{Dtype, TensorContainer};
use mha_tucker::{detensorise, DenseTensor, MhaLayerWeights, SharedTucker};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const D_MODEL: usize = 64;
pub const HEADS: usize = 4;
pub const LAYERS: usize = 2;

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

pub fn random_shared(dims: [usize; 4], ranks: [usize; 3], rng: &mut ChaCha8Rng) -> SharedTucker {
    let u1 = orthonormal(dims[0], ranks[0], rng);
    let u2 = orthonormal(dims[1], ranks[1], rng);
    let u3 = orthonormal(dims[2], ranks[2], rng);
    let cores = gaussian(&[ranks[0], ranks[1], ranks[2], dims[3]], rng);
    SharedTucker::new(u1, u2, u3, cores).unwrap()
}

pub fn rel_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    mha_tucker::tensor::relative_error(a, b).unwrap()
}

/// Weights whose tensorisation has exact shared structure at `ranks`.
pub fn exact_layer(ranks: [usize; 3], seed: u64) -> MhaLayerWeights {
    let st = random_shared([D_MODEL, D_MODEL / HEADS, 4, HEADS], ranks, &mut rng(seed));
    detensorise(&st.reconstruct()).unwrap()
}

pub fn random_layer(seed: u64) -> MhaLayerWeights {
    let mut r = rng(seed);
    let s = 1.0 / (D_MODEL as f64).sqrt();
    let mut m = || gaussian(&[D_MODEL, D_MODEL], &mut r).scaled(s);
    MhaLayerWeights::new(m(), m(), m(), m(), HEADS).unwrap()
}

pub fn name(layer: usize, proj: &str) -> String {
    format!("model.layers.{layer}.self_attn.{proj}_proj.weight")
}

pub fn naming_json(extra: &str) -> String {
    format!(
        r#"{{"q":"model.layers.{{layer}}.self_attn.q_proj.weight","k":"model.layers.{{layer}}.self_attn.k_proj.weight",
"v":"model.layers.{{layer}}.self_attn.v_proj.weight","o":"model.layers.{{layer}}.self_attn.o_proj.weight",
"transpose_on_load":{{"q":true,"k":true,"v":true,"o":true}},"n_heads":{HEADS},"n_layers":{LAYERS}{extra}}}"#
    )
}

/// Checkpoint with an embedding, a norm and the given layers, stored out-features first.
pub fn checkpoint(layers: &[MhaLayerWeights], dtype: Dtype) -> TensorContainer {
    let mut c = TensorContainer::new();
    c.set_metadata("format", "pt");
    let mut r = rng(999);
    c.insert_tensor("model.embed_tokens.weight", &gaussian(&[10, D_MODEL], &mut r), Dtype::F32);
    for (i, w) in layers.iter().enumerate() {
        for (proj, m) in [("q", &w.wq), ("k", &w.wk), ("v", &w.wv), ("o", &w.wo)] {
            c.insert_tensor(name(i, proj), &m.transpose().unwrap(), dtype);
        }
        c.insert_tensor(format!("model.layers.{i}.norm.weight"), &gaussian(&[D_MODEL], &mut r), Dtype::BF16);
    }
    c
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(ckpt: &TensorContainer, naming: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        ckpt.write(dir.path().join("model.safetensors")).unwrap();
        std::fs::write(dir.path().join("naming.json"), naming).unwrap();
        Self { dir }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.path().join(file)
    }

    pub fn ckpt(&self) -> PathBuf {
        self.path("model.safetensors")
    }

    pub fn naming(&self) -> PathBuf {
        self.path("naming.json")
    }

    /// `cmd --checkpoint … --naming … <extra>`
    pub fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let ckpt = self.ckpt();
        let naming = self.naming();
        let mut args = vec![cmd, "--checkpoint", ckpt.to_str().unwrap(), "--naming", naming.to_str().unwrap()];
        args.extend_from_slice(extra);
        run(&args)
    }
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    pub fn json_lines(&self) -> Vec<serde_json::Value> {
        self.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }
}

pub fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mha-tucker")).args(args).output().unwrap();
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
