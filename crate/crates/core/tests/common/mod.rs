#![allow(dead_code)]

use clsprobe::encoder::{
    pair_input, record_forward, record_mlm_logits, EncoderConfig, EncoderWeights,
};
use clsprobe::finetune::{finetune, FineTuneConfig, FineTunedModel};
use clsprobe::numerics::{finite_diff_check, GradCheckReport, Matrix, Parameter, Tape, Var};
use clsprobe::tasks::{generate_task, SignalRule, TaskDataset, TaskSpec};
use clsprobe::Result;

/// A small encoder that trains in well under a second.
pub fn small_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 32,
        max_len: 16,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        seed,
        ..EncoderConfig::default()
    }
}

pub fn small_task(rule: &str, n: usize, seed: u64) -> TaskDataset {
    let rule: SignalRule = rule.parse().unwrap();
    let mut spec = TaskSpec::new("t", rule, n, seed);
    spec.vocab_size = 32;
    generate_task(&spec).unwrap()
}

pub fn small_model(freeze: bool, seed: u64) -> (EncoderWeights, TaskDataset, FineTunedModel) {
    let enc = EncoderWeights::init(&small_config(seed)).unwrap();
    let task = small_task("any_of:5:9", 300, seed);
    let cfg = FineTuneConfig {
        max_epochs: 3,
        freeze_encoder: freeze,
        seed,
        ..FineTuneConfig::default()
    };
    let model = finetune(&enc, &task, &cfg).unwrap();
    (enc, task, model)
}

const EMB_SCALE: f64 = 50.0;

pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 12,
        max_len: 8,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        dropout_rate: 0.0,
        init_std: 0.02,
        seed: 5,
    }
}

/// Finite-difference check of a d_model=8, 2-layer encoder with a
/// classification head and the masked-token head.
pub fn encoder_and_head_gradcheck(tolerance: f64) -> GradCheckReport {
    let cfg = tiny_config();
    let enc = EncoderWeights::init(&cfg).unwrap();
    // Larger weights than the 0.02 init so every path carries signal.
    let mut params: Vec<Parameter> = enc
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut p = p.clone();
            for (j, v) in p.value.as_mut_slice().iter_mut().enumerate() {
                let scale = if p.name.starts_with("emb.") {
                    EMB_SCALE
                } else {
                    1.0
                };
                *v = *v * scale + 0.05 * ((i * 31 + j * 7) as f64).sin();
            }
            p
        })
        .collect();
    params.push(Parameter::new(
        "head.w",
        Matrix::from_vec(
            8,
            3,
            (0..24).map(|v| (v as f64 * 0.9).cos() * 0.5).collect(),
        )
        .unwrap(),
    ));
    params.push(Parameter::new(
        "head.b",
        Matrix::from_vec(1, 3, vec![0.1, -0.1, 0.05]).unwrap(),
    ));
    let n_enc = enc.params().len();

    let loss_fn = move |tape: &mut Tape, params: &[Parameter]| -> Result<Var> {
        let weights = EncoderWeights::from_parts(tiny_config(), params[..n_enc].to_vec())?;
        let (t1, s1) = pair_input(&[4, 5], &[6, 4]);
        let (t2, s2) = pair_input(&[7], &[8, 9, 10]);
        let hw = tape.param(&params[n_enc]);
        let hb = tape.param(&params[n_enc + 1]);
        let mut cls_rows = Vec::new();
        let mut mlm_rows = Vec::new();
        for (t, s) in [(&t1, &s1), (&t2, &s2)] {
            let levels = record_forward(tape, &weights, t, s, true, None)?;
            let last = *levels.last().unwrap();
            cls_rows.push(tape.gather_rows(last, &[0])?);
            mlm_rows.push(record_mlm_logits(tape, &weights, last, &[1, 2], true)?);
        }
        let pooled = tape.concat_rows(&cls_rows)?;
        let logits = tape.matmul(pooled, hw)?;
        let logits = tape.add_row(logits, hb)?;
        let cls_loss = tape.cross_entropy(logits, &[2, 0])?;
        let mlm = tape.concat_rows(&mlm_rows)?;
        let mlm_loss = tape.cross_entropy(mlm, &[4, 5, 7, 2])?;
        tape.add(cls_loss, mlm_loss)
    };
    finite_diff_check(&mut params, loss_fn, tolerance).unwrap()
}
