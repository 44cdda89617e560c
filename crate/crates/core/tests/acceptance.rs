//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass words on the command line to run only
//! the criteria whose names contain them.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use tactile_dog::classifier::{evaluate, train_classifier, Classifier, ClassifierConfig};
use tactile_dog::frame::{decode_frame, encode_frame, BoardFrame, CANVAS_COLS, CANVAS_ROWS, WINDOW_LEN};
use tactile_dog::pipeline::{
    decision_bytes, read_session_log, replay, Engine, Record, SegmenterConfig, SessionLogWriter,
};
use tactile_dog::sim::{generate_dataset, split_stratified, Fraction, NoiseModel, Subset, Synthesizer};
use tactile_dog::taxonomy::{ClassId, Taxonomy};
use tactile_dog::translator::{
    bleu, evaluate_translator, generate_corpus, make_pair_dataset, train_translator, GrammarConfig, Translator,
    TranslatorConfig,
};
use tactile_nn::gradcheck::{check_store, project, random_tensor, TOLERANCE};
use tactile_nn::layers::{ChannelNorm, Conv2d, Embedding, LayerNorm, Linear, MultiHeadAttention, ResidualBlock};
use tactile_nn::{AttentionMask, ParamStore};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn codec_round_trip() -> Outcome {
    let started = Instant::now();
    let mut r = common::rng(0xC0DEC);
    for i in 0..1000 {
        let (rows, cols) = (r.gen_range(1..=48u16), r.gen_range(1..=48u16));
        let samples: Vec<u8> = (0..rows as usize * cols as usize).map(|_| r.gen()).collect();
        let f = BoardFrame::new(r.gen_range(0..8), rows, cols, r.gen(), samples).map_err(|e| e.to_string())?;
        let bytes = encode_frame(&f);
        let back = decode_frame(&bytes).map_err(|e| format!("frame {i}: {e}"))?;
        ensure(back == f && encode_frame(&back) == bytes, || {
            format!("frame {i} changed in transit")
        })?;
    }
    let mut fuzzed = 0;
    let mut accepted = 0;
    for _ in 0..2000 {
        let c = common::random_stream(&mut r, 1).pop().expect("one frame");
        let mut bytes = encode_frame(&c.disassemble()[r.gen_range(0..8)]);
        for _ in 0..r.gen_range(1..4) {
            let at = r.gen_range(0..bytes.len());
            bytes[at] ^= r.gen_range(1..=255u8);
        }
        match r.gen_range(0..3) {
            0 => bytes.truncate(r.gen_range(0..bytes.len())),
            1 => bytes.extend((0..r.gen_range(1..16)).map(|_| r.gen::<u8>())),
            _ => {}
        }
        let outcome = catch_unwind(|| decode_frame(&bytes).is_ok()).map_err(|_| "decoder panicked".to_string())?;
        accepted += usize::from(outcome);
        fuzzed += 1;
    }
    for _ in 0..2000 {
        let bytes: Vec<u8> = (0..r.gen_range(0..1200)).map(|_| r.gen()).collect();
        catch_unwind(|| decode_frame(&bytes).is_ok()).map_err(|_| "decoder panicked on noise".to_string())?;
        fuzzed += 1;
    }
    let elapsed = started.elapsed();
    ensure(accepted == 0, || format!("{accepted} corrupted frames decoded"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 frames exact, {fuzzed} corrupt inputs handled without panic, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn gradient_checks() -> Outcome {
    let started = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    let mut count = 0;
    let mut record = |name: &'static str, err: f64| -> Result<(), String> {
        count += 1;
        ensure(err < TOLERANCE, || format!("{name}: relative error {err:e}"))?;
        if err > worst.0 {
            worst = (err, name);
        }
        Ok(())
    };
    let mut r = common::rng(0x6AD);

    let mut s = ParamStore::new();
    let a = s.add("a", random_tensor(&[3, 4], &mut r)).unwrap();
    let b = s.add("b", random_tensor(&[3, 4], &mut r)).unwrap();
    let bias = s.add("bias", random_tensor(&[4], &mut r)).unwrap();
    record(
        "elementwise",
        check_store(&mut s, |g, s| {
            let (a, b, bias) = (g.param(s, a), g.param(s, b), g.param(s, bias));
            let m = g.mul(a, b).unwrap();
            let sum = g.add(m, a).unwrap();
            let scaled = g.scale(sum, -1.3);
            let biased = g.add_bias(scaled, bias).unwrap();
            let y = g.relu(biased);
            project(g, y, 1)
        }),
    )?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&[2, 3, 5], &mut r)).unwrap();
    let lin = Linear::new(&mut s, "lin", 5, 4, true, &mut r).unwrap();
    record(
        "linear",
        check_store(&mut s, |g, s| {
            let x = g.param(s, x);
            let y = lin.forward(g, s, x).unwrap();
            project(g, y, 2)
        }),
    )?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&[4, 6], &mut r)).unwrap();
    record(
        "softmax",
        check_store(&mut s, |g, s| {
            let x = g.param(s, x);
            let y = g.softmax(x);
            project(g, y, 3)
        }),
    )?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&[2, 3, 8], &mut r)).unwrap();
    let ln = LayerNorm::new(&mut s, "ln", 8).unwrap();
    for p in s.iter_mut().skip(1) {
        for v in p.tensor.data_mut() {
            *v += 0.3;
        }
    }
    record(
        "layer_norm",
        check_store(&mut s, |g, s| {
            let x = g.param(s, x);
            let y = ln.forward(g, s, x).unwrap();
            project(g, y, 4)
        }),
    )?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&[2, 3, 4, 5], &mut r)).unwrap();
    let cn = ChannelNorm::new(&mut s, "cn", 3).unwrap();
    for p in s.iter_mut().skip(1) {
        for v in p.tensor.data_mut() {
            *v -= 0.4;
        }
    }
    record(
        "channel_norm",
        check_store(&mut s, |g, s| {
            let x = g.param(s, x);
            let y = cn.forward(g, s, x).unwrap();
            project(g, y, 5)
        }),
    )?;

    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let mut s = ParamStore::new();
        let x = s.add("x", random_tensor(&[2, 3, 7, 6], &mut r)).unwrap();
        let conv = Conv2d::new(&mut s, "conv", 3, 4, 3, stride, pad, &mut r).unwrap();
        record(
            "conv2d",
            check_store(&mut s, |g, s| {
                let x = g.param(s, x);
                let y = conv.forward(g, s, x).unwrap();
                project(g, y, 6)
            }),
        )?;
    }

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&[1, 2, 7, 8], &mut r)).unwrap();
    record(
        "max_pool2d",
        check_store(&mut s, |g, s| {
            let x = g.param(s, x);
            let y = g.max_pool2d(x, 3, 2, 1).unwrap();
            project(g, y, 7)
        }),
    )?;

    let mut s = ParamStore::new();
    let emb = Embedding::new(&mut s, "emb", 6, 4, &mut r).unwrap();
    record(
        "embedding",
        check_store(&mut s, |g, s| {
            let y = emb.forward(g, s, &[1, 3, 3, 0, 5, 1], &[2, 3]).unwrap();
            project(g, y, 8)
        }),
    )?;

    let mut s = ParamStore::new();
    let x = s.add("logits", random_tensor(&[5, 7], &mut r)).unwrap();
    record(
        "cross_entropy",
        check_store(&mut s, |g, s| {
            let x = g.param(s, x);
            g.cross_entropy(x, &[Some(1), None, Some(6), Some(0), None]).unwrap()
        }),
    )?;

    let mut s = ParamStore::new();
    let q = s.add("q", random_tensor(&[2, 3, 8], &mut r)).unwrap();
    let k = s.add("k", random_tensor(&[2, 4, 8], &mut r)).unwrap();
    let v = s.add("v", random_tensor(&[2, 4, 8], &mut r)).unwrap();
    let mask = AttentionMask {
        causal: true,
        key_padding: Some(vec![false, false, false, true, false, false, true, true]),
    };
    record(
        "attention",
        check_store(&mut s, |g, s| {
            let (q, k, v) = (g.param(s, q), g.param(s, k), g.param(s, v));
            let y = g.attention(q, k, v, 2, &mask).unwrap();
            project(g, y, 9)
        }),
    )?;

    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&[2, 3, 8], &mut r)).unwrap();
    let mem = s.add("mem", random_tensor(&[2, 5, 8], &mut r)).unwrap();
    let mha = MultiHeadAttention::new(&mut s, "mha", 8, 4, &mut r).unwrap();
    record(
        "multi_head_attention",
        check_store(&mut s, |g, s| {
            let (x, mem) = (g.param(s, x), g.param(s, mem));
            let out = mha.forward(g, s, x, mem, mem, &AttentionMask::default()).unwrap();
            project(g, out.output, 10)
        }),
    )?;

    for (cin, cout, stride) in [(3, 3, 1), (2, 4, 2)] {
        let mut s = ParamStore::new();
        let x = s.add("input", random_tensor(&[2, cin, 6, 6], &mut r)).unwrap();
        let block = ResidualBlock::new(&mut s, "block", cin, cout, stride, &mut r).unwrap();
        record(
            "residual_block",
            check_store(&mut s, |g, s| {
                let x = g.param(s, x);
                let y = block.forward(g, s, x).unwrap();
                project(g, y, 11)
            }),
        )?;
    }

    // Tiny classifier: stem, norm, residual stage, pool, flatten head.
    let mut s = ParamStore::new();
    let stem = Conv2d::new(&mut s, "stem", 3, 4, 3, 1, 1, &mut r).unwrap();
    let norm = ChannelNorm::new(&mut s, "norm", 4).unwrap();
    let block = ResidualBlock::new(&mut s, "stage", 4, 6, 2, &mut r).unwrap();
    let head = Linear::new(&mut s, "head", 6 * 2 * 2, 5, true, &mut r).unwrap();
    let input = random_tensor(&[2, 3, 8, 8], &mut r);
    record(
        "tiny_classifier",
        check_store(&mut s, |g, s| {
            let x = g.input(input.clone());
            let h = stem.forward(g, s, x).unwrap();
            let h = norm.forward(g, s, h).unwrap();
            let h = g.relu(h);
            let h = block.forward(g, s, h).unwrap();
            let h = g.max_pool2d(h, 2, 2, 0).unwrap();
            let h = g.reshape(h, vec![2, 24]).unwrap();
            let logits = head.forward(g, s, h).unwrap();
            g.cross_entropy(logits, &[Some(3), Some(0)]).unwrap()
        }),
    )?;

    // Tiny decoder layer: embedding, causal self-attention over padded
    // tokens, cross-attention, residual norm, vocabulary projection.
    let mut s = ParamStore::new();
    let emb = Embedding::new(&mut s, "emb", 7, 8, &mut r).unwrap();
    let self_attn = MultiHeadAttention::new(&mut s, "self", 8, 2, &mut r).unwrap();
    let cross = MultiHeadAttention::new(&mut s, "cross", 8, 2, &mut r).unwrap();
    let ln = LayerNorm::new(&mut s, "ln", 8).unwrap();
    let out = Linear::new(&mut s, "out", 8, 7, true, &mut r).unwrap();
    let memory = random_tensor(&[2, 3, 8], &mut r);
    let causal = AttentionMask {
        causal: true,
        key_padding: Some(vec![false, false, false, false, false, false, false, true]),
    };
    record(
        "tiny_translator",
        check_store(&mut s, |g, s| {
            let x = emb.forward(g, s, &[1, 4, 5, 2, 1, 6, 2, 0], &[2, 4]).unwrap();
            let mem = g.input(memory.clone());
            let a = self_attn.forward(g, s, x, x, x, &causal).unwrap().output;
            let h = g.add(x, a).unwrap();
            let c = cross
                .forward(g, s, h, mem, mem, &AttentionMask::default())
                .unwrap()
                .output;
            let h = g.add(h, c).unwrap();
            let h = ln.forward(g, s, h).unwrap();
            let logits = out.forward(g, s, h).unwrap();
            let logits = g.reshape(logits, vec![8, 7]).unwrap();
            let targets = [Some(4), Some(5), Some(2), None, Some(6), Some(2), Some(0), None];
            g.cross_entropy(logits, &targets).unwrap()
        }),
    )?;

    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{count} checks, worst {:.1e} ({}), {:.1} s",
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    ))
}

fn classifier_shape() -> Outcome {
    let tax = common::taxonomy();
    let clf = Classifier::build(ClassifierConfig::desk(), &tax).map_err(|e| e.to_string())?;
    let input = tactile_nn::Tensor::zeros(vec![1, WINDOW_LEN, CANVAS_ROWS, CANVAS_COLS]);
    let logits = clf.logits_of(input).map_err(|e| e.to_string())?;
    ensure(logits.shape() == [1, 81], || {
        format!("logits shape {:?}", logits.shape())
    })?;
    let synth = Synthesizer::with_defaults(tax.clone());
    let windows: Vec<_> = (0..1000)
        .map(|i| {
            synth
                .synthesize(ClassId(i % 81), i as u64, &NoiseModel::standard(i as u64))
                .unwrap()
        })
        .collect();
    let report = evaluate(&clf, &windows, 32).map_err(|e| e.to_string())?;
    let chance = 1.0 / 81.0;
    ensure((report.accuracy - chance).abs() <= 0.03, || {
        format!("untrained accuracy {:.4}, chance {chance:.4}", report.accuracy)
    })?;
    Ok(format!(
        "81 logits, untrained accuracy {:.4} (chance {chance:.4})",
        report.accuracy
    ))
}

fn classifier_desk() -> Outcome {
    let started = Instant::now();
    let tax = common::taxonomy();
    let synth = Arc::new(Synthesizer::with_defaults(tax.clone()));
    let plan = generate_dataset(synth.clone(), 20, 3, 0, NoiseModel::standard(0));
    ensure(plan.items().len() == 4860, || format!("{} windows", plan.items().len()))?;
    let labels: Vec<_> = plan.labels().into_iter().map(Some).collect();
    let (train, test) = split_stratified(&labels, Fraction::new(9, 10).unwrap(), 0);
    let mut clf = Classifier::build(ClassifierConfig::desk(), &tax).map_err(|e| e.to_string())?;
    train_classifier(&mut clf, &Subset::new(&plan, train.clone()), |e| {
        eprintln!(
            "  desk epoch {}: loss {:.4}, train acc {:.4}",
            e.epoch, e.mean_loss, e.running_accuracy
        )
    })
    .map_err(|e| e.to_string())?;
    let report = evaluate(&clf, &Subset::new(&plan, test.clone()), 32).map_err(|e| e.to_string())?;
    let desk_time = started.elapsed();

    let small = generate_dataset(synth, 5, 1, 1, NoiseModel::standard(1));
    let config = ClassifierConfig {
        epochs: 20,
        augment_shift: 0,
        ..ClassifierConfig::desk()
    };
    let mut overfit = Classifier::build(config, &tax).map_err(|e| e.to_string())?;
    let windows = small.materialize(0);
    train_classifier(&mut overfit, &windows, |_| {}).map_err(|e| e.to_string())?;
    let train_acc = evaluate(&overfit, &windows, 32).map_err(|e| e.to_string())?.accuracy;

    ensure(report.accuracy >= 0.95, || {
        format!("held-out accuracy {:.4}", report.accuracy)
    })?;
    ensure(desk_time < Duration::from_secs(30 * 60), || {
        format!("took {desk_time:?}")
    })?;
    ensure(train_acc >= 0.99, || format!("81x5 train accuracy {train_acc:.4}"))?;
    Ok(format!(
        "held-out {:.4} on {}/{} split in {:.0} s; 81x5 overfit {:.4}",
        report.accuracy,
        train.len(),
        test.len(),
        desk_time.as_secs_f64(),
        train_acc
    ))
}

fn translator_desk() -> Outcome {
    let started = Instant::now();
    let identity = vec![vec![3, 4, 5], vec![6]];
    let clipped = bleu(&[vec![7; 7]], &[vec![7, 1, 7, 2, 3, 4, 5]], 1).map_err(|e| e.to_string())?;
    ensure(bleu(&identity, &identity, 1).ok() == Some(1.0), || {
        "identity BLEU is not 1".into()
    })?;
    ensure((clipped - 2.0 / 7.0).abs() < 1e-12, || {
        format!("clipped unigram BLEU {clipped}")
    })?;

    let tax = common::taxonomy();
    let pairs = generate_corpus(&tax, &GrammarConfig::default()).map_err(|e| e.to_string())?;
    let (train, test) = make_pair_dataset(&pairs, Fraction::new(5, 6).unwrap(), 0);
    ensure((train.len(), test.len()) == (1010, 202), || {
        format!("split {}/{}", train.len(), test.len())
    })?;
    let mut t = Translator::build(TranslatorConfig::default(), &tax).map_err(|e| e.to_string())?;
    train_translator(&mut t, &train, |_| {}).map_err(|e| e.to_string())?;
    let eval = evaluate_translator(&t, &test).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(eval.bleu[0] >= 0.85, || format!("held-out BLEU-1 {:.4}", eval.bleu[0]))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "held-out BLEU-1 {:.4} (BLEU-4 {:.4}) on 1010/202 in {:.0} s; oracles 1.0 and 2/7",
        eval.bleu[0],
        eval.bleu[3],
        elapsed.as_secs_f64()
    ))
}

fn segmentation_equivalence() -> Outcome {
    let mut events = 0;
    for seed in 0..200u64 {
        let mut r = common::rng(0x5E6 ^ seed);
        let frames = common::random_stream(&mut r, 400);
        let cfg = if seed % 2 == 0 {
            SegmenterConfig::default()
        } else {
            common::random_config(&mut r)
        };
        let online = common::online_events(&frames, cfg);
        let offline = common::oracle_events(&frames, cfg);
        ensure(online == offline, || {
            format!(
                "stream {seed}: {} online events vs {} offline",
                online.len(),
                offline.len()
            )
        })?;
        events += online.len();
    }
    Ok(format!("200 streams, {events} events identical"))
}

fn closed_loop() -> Outcome {
    let models = common::overfit_models();
    let synth = Synthesizer::with_defaults(models.taxonomy.clone());
    let tokens = [
        "stroke_head",
        "scratch_chin",
        "rub_neck",
        common::SPURIOUS,
        "poke_hips",
        "stroke_head",
    ];
    let session = common::session(&synth, &tokens, 10, 42);
    let mut engine = Engine::new(models.clone(), SegmenterConfig::default());
    let mut buf = std::io::Cursor::new(Vec::new());
    let mut writer = SessionLogWriter::new(&mut buf).map_err(|e| e.to_string())?;
    let mut live_latency = Duration::ZERO;
    for c in session.canvases(&NoiseModel::standard(42)) {
        let step = engine.process(c).map_err(|e| e.to_string())?;
        live_latency = live_latency.max(step.event_latency.iter().copied().max().unwrap_or_default());
        writer.append_all(&step.records).map_err(|e| e.to_string())?;
    }
    writer
        .append_all(&engine.finish().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    writer.finish().map_err(|e| e.to_string())?;
    let log = read_session_log(buf.get_ref().as_slice()).map_err(|e| e.to_string())?;
    let expected = decision_bytes(&log);
    let actions = log.iter().filter(|r| matches!(r, Record::Action(_))).count();
    ensure(expected.len() >= tokens.len() && actions >= 2, || {
        format!("only {} decisions logged", expected.len())
    })?;

    let mut worst = live_latency;
    for speed in [1.0, 10.0] {
        let mut fresh = Engine::new(models.clone(), SegmenterConfig::default());
        let outcome = replay(&log, &mut fresh, speed, |_| {}).map_err(|e| e.to_string())?;
        ensure(decision_bytes(&outcome.records) == expected, || {
            format!("decisions differ at {speed}x")
        })?;
        worst = worst.max(outcome.max_event_latency());
    }
    ensure(worst <= Duration::from_millis(100), || {
        format!("event latency {worst:?}")
    })?;
    Ok(format!(
        "{} decisions identical at 1x and 10x over {} ticks; max event latency {:.1} ms",
        expected.len(),
        session.len_ticks(),
        worst.as_secs_f64() * 1e3
    ))
}

fn taxonomy_counts() -> Outcome {
    let tax = Taxonomy::load_default();
    let counts = [
        tax.kinds().len(),
        tax.parts().len(),
        tax.classes().len(),
        tax.actions().len(),
        tax.actions().iter().filter(|a| a.performable).count(),
        tax.actions().iter().filter(|a| a.in_translation_vocab).count(),
    ];
    ensure(counts == [13, 11, 81, 44, 32, 40], || format!("counts {counts:?}"))?;
    Ok("13/11/81/44/32/40".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("codec_round_trip", codec_round_trip),
        ("gradient_checks", gradient_checks),
        ("classifier_shape", classifier_shape),
        ("classifier_desk", classifier_desk),
        ("translator_desk", translator_desk),
        ("segmentation_equivalence", segmentation_equivalence),
        ("closed_loop_determinism", closed_loop),
        ("taxonomy_counts", taxonomy_counts),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
