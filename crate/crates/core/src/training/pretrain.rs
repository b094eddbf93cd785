use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::bce_loss;
use crate::error::{Error, Result};
use crate::evaluation::ConfusionCounts;
use crate::model::{DadlNetParams, Mode};
use crate::representation::Samples;
use crate::tensor::{Tape, Tensor};

use super::{derive_seed, minibatches, nadam_step, EarlyStopper, History, NadamState, TrainConfig};

const EVAL_CHUNK: usize = 128;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Inference-mode class-1 probabilities of every sample.
pub fn predict_all(model: &DadlNetParams, samples: &Samples) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend(model.predict_proba(samples.grid.batch(chunk))?);
    }
    Ok(out)
}

/// Inference-mode features `[N, D]` of every sample.
pub fn extract_all(model: &DadlNetParams, samples: &Samples) -> Result<Tensor> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut data = Vec::new();
    for chunk in idx.chunks(EVAL_CHUNK) {
        data.extend(model.features(samples.grid.batch(chunk))?.into_data());
    }
    Tensor::new(vec![samples.len(), model.config.feature_dim()], data)
}

/// Mean BCE and accuracy of the model in inference mode.
pub fn evaluate_model(model: &DadlNetParams, samples: &Samples) -> Result<(f64, f64)> {
    let probs = predict_all(model, samples)?;
    let loss = bce_loss(&probs, &samples.labels)?;
    let c = ConfusionCounts::from_probs(&probs, &samples.labels);
    Ok((loss, (c.tp + c.tn) as f64 / c.total() as f64))
}

/// Minimizes BCE on shuffled mini-batches of `train`, early-stopping on
/// the validation loss. Returns the parameters of the best validation
/// epoch and the per-epoch history (`pretrain/train`, `pretrain/val`).
pub fn pretrain(
    model: &DadlNetParams,
    train: &Samples,
    val: &Samples,
    cfg: &TrainConfig,
) -> Result<(DadlNetParams, History)> {
    cfg.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Data(format!(
            "pretraining needs at least 2 training and 1 validation sample, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let mut model = model.clone();
    let mut state = NadamState::new();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = History::default();
    let shuffle_seed = derive_seed(cfg.seed, SHUFFLE_STREAM);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DROPOUT_STREAM));

    for epoch in 1..=cfg.max_epochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut counts = ConfusionCounts::default();
        for batch in minibatches(train.len(), cfg.batch_size, &mut shuffle) {
            let (x, y) = train.batch(&batch);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, &|_| true);
            let xv = tape.leaf(x, false);
            let mut mode = Mode::Train(&mut drop_rng);
            let feats = model.extract_features(&mut tape, &bound, xv, &mut mode)?;
            let probs = model.classify(&mut tape, &bound, feats.features)?;
            let loss = tape.bce(probs, &y)?;
            tape.backward(loss)?;
            let grads = bound.grads(&tape);
            loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
            counts = counts.merge(&ConfusionCounts::from_probs(tape.value(probs).data(), &y));
            nadam_step(&mut model.params, &grads, &mut state, cfg)?;
            model.apply_bn_stats(&feats.bn_stats)?;
        }
        let train_acc = (counts.tp + counts.tn) as f64 / counts.total() as f64;
        history.push(epoch, "pretrain/train", loss_sum / train.len() as f64, Some(train_acc));
        let (val_loss, val_acc) = evaluate_model(&model, val)?;
        history.push(epoch, "pretrain/val", val_loss, Some(val_acc));
        log::debug!("pretrain epoch {epoch}: val loss {val_loss:.5} acc {val_acc:.4}");
        if stopper.observe(val_loss, || model.clone()) {
            break;
        }
    }
    Ok((stopper.into_best().unwrap_or(model), history))
}
