use mha_tucker::container::{
    load_layer, read_artifact, store_layer, write_artifact, ArtifactLayer, LayerNamingConfig, LayerRecord,
    TensorContainer,
};
use mha_tucker::linalg::orthonormality_defect;
use mha_tucker::tensor::relative_error;
use mha_tucker::{
    attention_forward, compress_layer, detensorise, reconstruct_layer, shared_objective, shared_objective_per_head,
    tensorise, CompressedLayer, DenseTensor, Error, MhaLayerWeights, SolverOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::args::{CompressArgs, InputArgs, JobsArg, LayerSpec, ReconstructArgs, VerifyArgs};
use crate::report::{Detail, Record, Status, TensorNames};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

/// Base seed of the forward-check probe batch; layer `i` uses `PROBE_SEED + i`.
pub const PROBE_SEED: u64 = 20240917;
/// Sequence length of the probe batch.
pub const PROBE_LEN: usize = 8;
pub const ORTHONORMALITY_TOL: f64 = 1e-9;
pub const OBJECTIVE_TOL: f64 = 1e-12;

/// An error that stops the whole command.
#[derive(Debug)]
pub struct Fatal {
    pub code: u8,
    pub message: String,
}

impl Fatal {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn from_error(context: &str, e: &Error) -> Self {
        Self::new(exit_code(e), format!("{context}: {e}"))
    }
}

/// Records of a finished command plus its exit status.
#[derive(Debug)]
pub struct Outcome {
    pub records: Vec<Record>,
    pub code: u8,
}

/// Library errors split into input/format problems and everything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::Format(_)
        | Error::OutOfBounds { .. }
        | Error::UnknownDtype(_)
        | Error::MissingTensor(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

/// Per-layer results in layer order, with error records and the combined exit code.
fn collect(command: &'static str, results: Vec<(usize, Result<Vec<Record>, Error>)>) -> Outcome {
    let mut code = EXIT_OK;
    let mut records = Vec::new();
    for (layer, r) in results {
        match r {
            Ok(rs) => records.extend(rs),
            Err(e) => {
                code = code.max(exit_code(&e));
                records.push(Record::error(command, layer, e.to_string()));
            }
        }
    }
    if code == EXIT_OK && records.iter().any(|r| r.status == Status::Fail) {
        code = EXIT_VALIDATION;
    }
    Outcome { records, code }
}

fn open_inputs(a: &InputArgs) -> Result<(TensorContainer, LayerNamingConfig), Fatal> {
    let cfg = LayerNamingConfig::read(&a.naming)
        .map_err(|e| Fatal::from_error(&format!("naming config {}", a.naming.display()), &e))?;
    let ckpt = TensorContainer::read(&a.checkpoint)
        .map_err(|e| Fatal::from_error(&format!("checkpoint {}", a.checkpoint.display()), &e))?;
    Ok((ckpt, cfg))
}

fn select(spec: &LayerSpec, available: &[usize]) -> Result<Vec<usize>, Fatal> {
    spec.resolve(available).map_err(|m| Fatal::new(EXIT_VALIDATION, m))
}

fn pool(jobs: &JobsArg) -> Result<rayon::ThreadPool, Fatal> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.jobs.map_or(0, usize::from))
        .build()
        .map_err(|e| Fatal::new(EXIT_USAGE, format!("cannot start worker pool: {e}")))
}

fn layer_context(layer: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::RankOutOfRange { .. } | Error::InvalidOptions(_) | Error::NonFinite(_) | Error::NoConvergence(_) => {
            Error::InvalidWeights(format!("layer {layer}: {e}"))
        }
        other => other,
    }
}

pub fn inspect(a: &InputArgs) -> Result<Outcome, Fatal> {
    let (ckpt, cfg) = open_inputs(a)?;
    let layers = select(&a.layers, &(0..cfg.n_layers).collect::<Vec<_>>())?;
    let results = layers
        .iter()
        .map(|&i| {
            let r = load_layer(&ckpt, &cfg, i).map(|w| {
                let names = cfg.names(i);
                vec![Record::ok(
                    "inspect",
                    i,
                    Detail::Inspect {
                        d_model: w.d_model,
                        heads: w.heads,
                        d_v: w.d_v,
                        n_original: w.parameter_count() as u64,
                        tensors: TensorNames { q: names.q, k: names.k, v: names.v, o: names.o },
                    },
                )]
            });
            (i, r)
        })
        .collect();
    Ok(collect("inspect", results))
}

pub fn compress(a: &CompressArgs) -> Result<Outcome, Fatal> {
    let opts = SolverOptions { max_iters: a.max_iters, fit_tolerance: a.tol };
    opts.validate().map_err(|e| Fatal::new(EXIT_USAGE, e.to_string()))?;
    let (ckpt, cfg) = open_inputs(&a.input)?;
    let layers = select(&a.input.layers, &(0..cfg.n_layers).collect::<Vec<_>>())?;

    let run = |i: usize| -> Result<(ArtifactLayer, Record), Error> {
        let w = load_layer(&ckpt, &cfg, i)?;
        let ranks = cfg.ranks_for(i).unwrap_or(a.ranks.0);
        let (c, rep) = compress_layer(&w, ranks, &opts).map_err(layer_context(i))?;
        let record = Record::ok(
            "compress",
            i,
            Detail::Compress {
                ranks: ranks.as_array(),
                n_original: rep.n_original,
                n_compressed: rep.n_compressed,
                cr: rep.cr,
                relative_error: rep.relative_error,
                fit: c.fit,
                iterations: rep.iterations,
                converged: rep.converged,
            },
        );
        Ok((ArtifactLayer { record: LayerRecord::new(i, &c, &rep, &opts), compressed: c }, record))
    };
    let results: Vec<_> = pool(&a.jobs)?.install(|| layers.par_iter().map(|&i| (i, run(i))).collect());

    let done: Vec<ArtifactLayer> = results
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(|(l, _)| l.clone()))
        .collect();
    let mut outcome = collect(
        "compress",
        results.into_iter().map(|(i, r)| (i, r.map(|(_, rec)| vec![rec]))).collect(),
    );
    if !done.is_empty() {
        write_artifact(&done)
            .write(&a.out)
            .map_err(|e| Fatal::from_error(&format!("writing {}", a.out.display()), &e))?;
    } else if outcome.code == EXIT_OK {
        outcome.code = EXIT_VALIDATION;
    }
    Ok(outcome)
}

fn load_artifact(path: &std::path::Path) -> Result<Vec<ArtifactLayer>, Fatal> {
    TensorContainer::read(path)
        .and_then(|c| read_artifact(&c))
        .map_err(|e| Fatal::from_error(&format!("artifact {}", path.display()), &e))
}

/// Checkpoint weights of `layer`, checked against the dims recorded in the artifact.
fn matching_weights(
    ckpt: &TensorContainer,
    cfg: &LayerNamingConfig,
    layer: &ArtifactLayer,
) -> Result<MhaLayerWeights, Error> {
    let i = layer.record.layer;
    let w = load_layer(ckpt, cfg, i)?;
    let recorded = layer.compressed.original_dims;
    if (w.d_model, w.heads, w.d_v) != recorded {
        return Err(Error::Shape(format!(
            "layer {i}: checkpoint dims (d_model, h, d_v) = ({}, {}, {}) but artifact records {recorded:?}",
            w.d_model, w.heads, w.d_v
        )));
    }
    Ok(w)
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<Outcome, Fatal> {
    let (ckpt, cfg) = open_inputs(&a.input)?;
    let artifact = load_artifact(&a.artifact)?;
    let available: Vec<usize> = artifact.iter().map(|l| l.record.layer).collect();
    let layers = select(&a.input.layers, &available)?;

    let run = |l: &ArtifactLayer| -> Result<(MhaLayerWeights, Record), Error> {
        let w = matching_weights(&ckpt, &cfg, l)?;
        let rec = reconstruct_layer(&l.compressed)?;
        let change = relative_error(&tensorise(&w)?, &tensorise(&rec)?)?;
        let record = Record::ok(
            "reconstruct",
            l.record.layer,
            Detail::Reconstruct { ranks: l.record.ranks, relative_change: change },
        );
        Ok((rec, record))
    };
    let chosen: Vec<&ArtifactLayer> = artifact.iter().filter(|l| layers.contains(&l.record.layer)).collect();
    let results: Vec<_> =
        pool(&a.jobs)?.install(|| chosen.par_iter().map(|l| (l.record.layer, run(l))).collect());

    let mut out = ckpt.clone();
    let mut staged = Vec::new();
    for (i, r) in results {
        let r = r.and_then(|(w, record)| {
            out = store_layer(&out, &cfg, i, &w)?;
            Ok(vec![record])
        });
        staged.push((i, r));
    }
    let outcome = collect("reconstruct", staged);
    if outcome.code == EXIT_OK {
        out.write(&a.out)
            .map_err(|e| Fatal::from_error(&format!("writing {}", a.out.display()), &e))?;
    }
    Ok(outcome)
}

/// The seeded `PROBE_LEN × d_model` input used by the forward check.
pub fn probe_batch(layer: usize, d_model: usize) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED + layer as u64);
    let data = (0..PROBE_LEN * d_model).map(|_| StandardNormal.sample(&mut rng)).collect();
    DenseTensor::matrix(PROBE_LEN, d_model, data).expect("consistent shape")
}

fn round_trip_mismatches(w: &MhaLayerWeights) -> Result<f64, Error> {
    let back = detensorise(&tensorise(w)?)?;
    let count = [(&w.wq, &back.wq), (&w.wk, &back.wk), (&w.wv, &back.wv), (&w.wo, &back.wo)]
        .iter()
        .map(|(a, b)| {
            if a.shape() != b.shape() {
                return a.len().max(b.len());
            }
            a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
        })
        .sum::<usize>();
    Ok(count as f64)
}

fn artifact_checks(
    layer: usize,
    w: &MhaLayerWeights,
    c: &CompressedLayer,
    forward_tol: f64,
) -> Result<Vec<Record>, Error> {
    let mut out = Vec::new();
    for (name, u) in ["u1", "u2", "u3"].iter().zip(c.shared.factors()) {
        out.push(Record::check(layer, format!("orthonormality.{name}"), orthonormality_defect(u), ORTHONORMALITY_TOL));
    }
    let w_all = tensorise(w)?;
    let a = shared_objective(&w_all, &c.shared)?;
    let b = shared_objective_per_head(&w_all, &c.shared)?;
    let scale = a.abs().max(b.abs());
    let agreement = if scale == 0.0 { (a - b).abs() } else { (a - b).abs() / scale };
    out.push(Record::check(layer, "objective_agreement", agreement, OBJECTIVE_TOL));

    let x = probe_batch(layer, w.d_model);
    let y0 = attention_forward(w, &x, &x, &x)?;
    let y1 = attention_forward(&reconstruct_layer(c)?, &x, &x, &x)?;
    out.push(Record::check(layer, "forward_delta", relative_error(&y0, &y1)?, forward_tol));
    Ok(out)
}

pub fn verify(a: &VerifyArgs) -> Result<Outcome, Fatal> {
    if a.forward_tol.is_nan() || a.forward_tol < 0.0 {
        return Err(Fatal::new(EXIT_USAGE, "--forward-tol must be non-negative"));
    }
    let (ckpt, cfg) = open_inputs(&a.input)?;
    let artifact = a.artifact.as_deref().map(load_artifact).transpose()?;
    let layers = select(&a.input.layers, &(0..cfg.n_layers).collect::<Vec<_>>())?;
    let explicit = matches!(a.input.layers, LayerSpec::List(_));

    let run = |i: usize| -> Result<Vec<Record>, Error> {
        let mut records = Vec::new();
        let entry = artifact.as_ref().and_then(|art| art.iter().find(|l| l.record.layer == i));
        let w = match entry {
            Some(l) => matching_weights(&ckpt, &cfg, l)?,
            None => load_layer(&ckpt, &cfg, i)?,
        };
        records.push(Record::check(i, "round_trip", round_trip_mismatches(&w)?, 0.0));
        match entry {
            Some(l) => records.extend(artifact_checks(i, &w, &l.compressed, a.forward_tol)?),
            None if artifact.is_some() && explicit => {
                return Err(Error::Format(format!("layer {i} is not in the artifact")));
            }
            None => {}
        }
        Ok(records)
    };
    let results: Vec<_> = pool(&a.jobs)?.install(|| layers.par_iter().map(|&i| (i, run(i))).collect());
    Ok(collect("verify", results))
}
