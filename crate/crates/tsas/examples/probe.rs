// scratch experiment harness; not part of the deliverable
use tsas::pipeline::{pretrain_supervised, run_variant};
use tsas::synth::{synthesize, SynthSpec};
use tsas_core::config::{RunConfig, TrainConfig};
use tsas_core::toymodel::{ToyConfig, ToyModel, Vocab};
use tsas_core::types::VariantTag;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let pretrain_epochs: u32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(40);
    let dropout: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let entity_shift: bool = args.get(4).map(|s| s == "1").unwrap_or(true);
    let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let train_dropout: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let mut spec = SynthSpec::shifted(200, 200, seed);
    spec.entity_shift = entity_shift;
    let corpus = synthesize(&spec).unwrap();
    let mut all = corpus.train.clone();
    all.extend_from_slice(&corpus.test);
    let vocab = Vocab::encode_corpus(&all);

    let mut cfg = RunConfig::default();
    cfg.sampling.base_seed = seed;
    cfg.sampling.dropout_rate = dropout;
    cfg.train.seed = seed;
    cfg.train.learning_rate = lr;
    cfg.workers = 4;

    let toycfg = ToyConfig { dropout_rate: train_dropout, ..ToyConfig::default() };
    let mut model = ToyModel::new(vocab, toycfg, seed).unwrap();
    let t0 = std::time::Instant::now();
    let (trace, _) = pretrain_supervised(
        &mut model,
        &corpus.train,
        &cfg.prompt_template,
        &TrainConfig { epochs: pretrain_epochs, learning_rate: lr, ..cfg.train.clone() },
    )
    .unwrap();
    // train-split competence probe
    let train_probe = run_variant(VariantTag::Naive, &model, &corpus.train, None, &cfg).unwrap();
    eprintln!(
        "seed {seed} pre {pretrain_epochs}ep p={dropout} eshift={entity_shift} lr={lr}: pretrain {:?} loss {:.3}->{:.3} | train EM {:.1}",
        t0.elapsed(),
        trace.epoch_mean_loss.first().unwrap(),
        trace.epoch_mean_loss.last().unwrap(),
        train_probe.report.em_before,
    );

    for tag in [VariantTag::Tsas, VariantTag::TsasNoFilter, VariantTag::Lmsi] {
        let out = run_variant(tag, &model, &corpus.test, Some(&corpus.train), &cfg).unwrap();
        let r = &out.report;
        eprintln!(
            "  {:16} em {:6.2} -> {:6.2}  f1 {:6.2} -> {:6.2}  kept {:3}/{:3}  agree {:.3}  div {:.3}",
            tag.to_string(), r.em_before, r.em_after, r.f1_before, r.f1_after,
            r.retained, r.total, r.mean_agreement.unwrap_or(f64::NAN), r.lexical_diversity.unwrap_or(f64::NAN),
        );
    }
}
