//! Runs the ten acceptance criteria and prints one PASS/FAIL line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pico::codec::{
    apply_level_gain, decode_image_pipelined, decode_image_traced, encode_image_traced, level_embedding, GainDirection,
    GainTable, ModelBundle, Preset, QualityLevel, TileGrid, LEVEL_COUNT,
};
use pico::coding::{
    build_cdf_tables, context_phases, dequantize_value, quantize_value, range_decode, range_encode, ContextModel,
    ContextSchedule, ScaleTable, DEFAULT_SUPPORT,
};
use pico::layers::{
    convscale_collapse, convscale_forward, haar_collapse_into_conv, haar_resample, ConvScaleParams, Direction,
};
use pico::metrics::{
    bayesian_elo, bd_rate, boundary_report, ms_ssim, tiling_artifact_loss, FloatImage, PairwiseRecord, RdPoint,
    SeamAxis,
};
use pico::model::ModelConfig;
use pico::nas::{filter_by_macs, kmacs_of, values_of, SearchSpace};
use pico::quant::{reference_forward, GoldenFile, QuantizedTensor};
use pico::tensor::conv2d;
use pico::{ConvWeights, RgbImage, Shape, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn nas_cardinality() -> Outcome {
    let t = Instant::now();
    let dec = SearchSpace::decoder();
    let enc = SearchSpace::encoder();
    let nd = dec.enumerate().count() as u64;
    let ne = enc.enumerate().count() as u64;
    let dt = t.elapsed();
    ensure!(nd == 1_492_992, "decoder space enumerates {nd}");
    ensure!(ne == 746_496, "encoder space enumerates {ne}");
    ensure!(nd == dec.cardinality() && ne == enc.cardinality(), "cardinality disagrees with enumeration");
    ensure!(dt < Duration::from_secs(10), "took {dt:?}");
    Ok(format!("decoder {nd}, encoder {ne}, {:.2}s", dt.as_secs_f64()))
}

fn kmacs_filter() -> Outcome {
    let t = Instant::now();
    let space = SearchSpace::decoder();
    let (lo, hi) = (32.7, 48.0);
    let final_cfg = ModelConfig::final_decoder();
    let want = values_of(&final_cfg);
    let final_index = (0..space.cardinality()).find(|&i| space.values_at(i) == want);
    let final_index = final_index.ok_or("final decoder config is not in the decoder space")?;
    let mut kept = 0u64;
    let mut final_kept = false;
    for rec in filter_by_macs(space.enumerate(), lo, hi) {
        kept += 1;
        final_kept |= rec.index == final_index;
    }
    let dt = t.elapsed();
    let frac = kept as f64 / space.cardinality() as f64;
    ensure!(dt < Duration::from_secs(300), "took {dt:?}");
    ensure!((0.2..=0.5).contains(&frac), "retained fraction {frac:.4}");
    ensure!(final_kept, "final config ({:.3} kMACs/px) filtered out", kmacs_of(&final_cfg));
    Ok(format!(
        "kept {kept} ({:.1}%), final config {:.3} kMACs/px retained, {:.1}s",
        100.0 * frac,
        kmacs_of(&final_cfg),
        dt.as_secs_f64()
    ))
}

fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn rel_diff(a: &Tensor, b: &Tensor) -> f32 {
    a.max_abs_diff(b).unwrap() / b.max_abs().max(1e-12)
}

fn reparam_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_cs = 0f32;
    for _ in 0..100 {
        let groups = [1, 2, 4][rng.gen_range(0..3)];
        let cin = groups * rng.gen_range(1..=8);
        let cout = groups * rng.gen_range(1..=6);
        let k = [1, 3][rng.gen_range(0..2)];
        let w = random_tensor(Shape::new(cout, cin / groups, k, k), &mut rng);
        let b = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let base = ConvWeights::new(w, b, 1, k / 2, groups).map_err(e)?;
        let s_in = (0..cin / groups).map(|_| rng.gen_range(0.1..3.0)).collect();
        let s_out = (0..cout).map(|_| rng.gen_range(0.1..3.0)).collect();
        let p = ConvScaleParams::new(base, s_in, s_out).map_err(e)?;
        let x = random_tensor(Shape::new(1, cin, rng.gen_range(3..12), rng.gen_range(3..12)), &mut rng);
        let train = convscale_forward(&x, &p).map_err(e)?;
        let infer = conv2d(&x, &convscale_collapse(&p)).map_err(e)?;
        worst_cs = worst_cs.max(rel_diff(&infer, &train));
    }
    ensure!(worst_cs <= 1e-6, "ConvScale collapse relative error {worst_cs:e}");

    let mut worst_haar = 0f32;
    for _ in 0..20 {
        let c = rng.gen_range(1..6);
        let (h, w) = (2 * rng.gen_range(1..8), 2 * rng.gen_range(1..8));
        let x = random_tensor(Shape::new(1, c, h, w), &mut rng);
        let k = rng.gen_range(1..10);
        let down = ConvWeights::new(
            random_tensor(Shape::new(k, 4 * c, 1, 1), &mut rng),
            (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            1,
            0,
            1,
        )
        .map_err(e)?;
        let explicit = conv2d(&haar_resample(&x, Direction::Down).map_err(e)?, &down).map_err(e)?;
        let collapsed = haar_collapse_into_conv(Direction::Down, &down).map_err(e)?.apply(&x).map_err(e)?;
        worst_haar = worst_haar.max(rel_diff(&collapsed, &explicit));

        let up = ConvWeights::new(
            random_tensor(Shape::new(4 * k, c, 1, 1), &mut rng),
            (0..4 * k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            1,
            0,
            1,
        )
        .map_err(e)?;
        let explicit = haar_resample(&conv2d(&x, &up).map_err(e)?, Direction::Up).map_err(e)?;
        let collapsed = haar_collapse_into_conv(Direction::Up, &up).map_err(e)?.apply(&x).map_err(e)?;
        worst_haar = worst_haar.max(rel_diff(&collapsed, &explicit));
    }
    ensure!(worst_haar <= 1e-5, "Haar collapse relative error {worst_haar:e}");

    for _ in 0..20 {
        let s = Shape::new(1, rng.gen_range(1..5), 2 * rng.gen_range(1..33), 2 * rng.gen_range(1..33));
        let x = Tensor::from_fn(s, |_, _, _, _| rng.gen_range(0..=255) as f32);
        let back = haar_resample(&haar_resample(&x, Direction::Down).map_err(e)?, Direction::Up).map_err(e)?;
        ensure!(back == x, "iHaar(Haar(x)) differs on 8-bit data of shape {s}");
        let x = x.map(|v| v / 256.0);
        let back = haar_resample(&haar_resample(&x, Direction::Down).map_err(e)?, Direction::Up).map_err(e)?;
        ensure!(back == x, "iHaar(Haar(x)) differs on k/256 data of shape {s}");
    }
    Ok(format!(
        "ConvScale rel err {worst_cs:.1e}, Haar collapse rel err {worst_haar:.1e}, iHaar(Haar) exact on 8-bit grids, {:.2}s",
        t.elapsed().as_secs_f64()
    ))
}

fn coding_efficiency() -> Outcome {
    let tables = build_cdf_tables(&ScaleTable::new(), DEFAULT_SUPPORT).map_err(e)?;
    ensure!(tables.len() == 64, "{} tables", tables.len());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1_000_000;
    let mut ids = Vec::with_capacity(n);
    let mut syms = Vec::with_capacity(n);
    for i in 0..n {
        let id = i % 64;
        let sigma = tables.scales.sigmas[id];
        let v = normal(&mut rng) * sigma;
        let mut s = v.round() as i32;
        if rng.gen_ratio(1, 5000) {
            s = rng.gen_range(-3000..3000);
        }
        ids.push(id);
        syms.push(s);
    }
    let bytes = range_encode(&syms, &ids, &tables).map_err(e)?;
    let back = range_decode(&bytes, &ids, &tables).map_err(e)?;
    ensure!(back == syms, "decoded symbols differ");
    let est_bits: f64 = syms.iter().zip(&ids).map(|(&s, &i)| tables.tables[i].cost_bits(s)).sum();
    let est = est_bits / 8.0;
    let actual = bytes.len() as f64;
    ensure!(actual <= est * 1.01 + 64.0, "{actual} bytes vs estimate {est:.0}");
    Ok(format!(
        "{n} symbols over 64 tables lossless, {actual} bytes vs {est:.0} estimated ({:+.3}%)",
        100.0 * (actual / est - 1.0)
    ))
}

/// Box-Muller standard normal.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const GOLDEN_SEED: u64 = 7;

fn golden_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/scale_decoder_golden.txt")
}

fn determinism() -> Outcome {
    let bundle = ModelBundle::synthetic(Preset::Tiny, ContextSchedule::Grid2x2, GOLDEN_SEED).map_err(e)?;
    let qm = &bundle.scale_decoder;
    let text = std::fs::read_to_string(golden_path()).map_err(e)?;
    let golden = GoldenFile::parse(&text).map_err(e)?;
    let mut runs = 0;
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(e)?;
        for _ in 0..34 {
            let bad = pool.install(|| golden.verify(qm)).map_err(e)?;
            ensure!(bad.is_empty(), "{threads} threads: golden cases {bad:?} differ");
            let again = pool.install(|| GoldenFile::record(qm, golden.cases.len(), 6, 6, 0)).map_err(e)?;
            ensure!(again.to_text() == text, "{threads} threads: re-recorded file differs");
            runs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let s = Shape::new(1, qm.config.hyper_channels, rng.gen_range(1..9), rng.gen_range(1..9));
        let x = QuantizedTensor {
            shape: s,
            data: (0..s.numel()).map(|_| rng.gen()).collect(),
        };
        let fast = qm.forward(x.clone()).map_err(e)?;
        let slow = reference_forward(qm, &x).map_err(e)?;
        ensure!(fast == slow, "input {i} ({s}): optimized and reference outputs differ");
    }
    Ok(format!(
        "{} golden cases identical over {runs} runs at 1/2/8 threads; 1000 inputs match the reference",
        golden.cases.len()
    ))
}

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let smooth = rng.gen_bool(0.5);
    let f: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.005..0.05));
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for (c, fc) in f.iter().enumerate() {
                let v = if smooth {
                    128.0 + 90.0 * ((x as f32 * fc + c as f32).sin() * (y as f32 * fc * 0.7).cos()) + rng.gen_range(-8.0..8.0)
                } else {
                    rng.gen_range(0.0..256.0)
                };
                data.push(v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(w, h, data).unwrap()
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let bundle = ModelBundle::synthetic(Preset::Tiny, ContextSchedule::Grid2x2, 11).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sizes = vec![(700, 500), (1512, 1512), (4032, 3024), (1, 1), (504, 504), (505, 3)];
    while sizes.len() < 20 {
        sizes.push((rng.gen_range(1..800), rng.gen_range(1..600)));
    }
    let mut total_bytes = 0;
    for (i, &(w, h)) in sizes.iter().enumerate() {
        let img = random_image(w, h, &mut rng);
        let level = QualityLevel::new(rng.gen_range(0..LEVEL_COUNT)).map_err(e)?;
        let (bs, enc_traces) = encode_image_traced(&img, level, &bundle).map_err(e)?;
        let bytes = bs.to_bytes();
        let (out, dec_traces) = decode_image_traced(&bytes, &bundle).map_err(|err| format!("image {i} {w}x{h}: {err}"))?;
        ensure!((out.width, out.height) == (w, h), "image {i}: decoded {}x{}", out.width, out.height);
        ensure!(enc_traces.len() == dec_traces.len(), "image {i}: tile counts differ");
        for (k, (a, b)) in enc_traces.iter().zip(&dec_traces).enumerate() {
            ensure!(a.y_hat == b.y_hat, "image {i} {w}x{h}: tile {k} y_hat differs");
            ensure!(a.z_hat == b.z_hat && a.sigma == b.sigma, "image {i}: tile {k} hyper path differs");
        }
        let (again, _) = encode_image_traced(&img, level, &bundle).map_err(e)?;
        ensure!(again.to_bytes() == bytes, "image {i} {w}x{h}: repeated encode differs");
        let piped = decode_image_pipelined(&bytes, &bundle).map_err(e)?;
        ensure!(piped == out, "image {i} {w}x{h}: pipelined decode differs");
        total_bytes += bytes.len();
    }
    Ok(format!(
        "20 images incl. 700x500, 1512x1512, 4032x3024 ({total_bytes} bytes total), {:.1}s",
        t.elapsed().as_secs_f64()
    ))
}

fn width_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for _ in 0..1_000_000 {
        let q: f32 = rng.gen_range(0.25..=4.0);
        let mu: f32 = rng.gen_range(-50.0..50.0);
        let y: f32 = mu + rng.gen_range(-200.0..200.0f32) * if rng.gen_bool(0.1) { 0.01 } else { 1.0 };
        let k = quantize_value(y, mu, q);
        let err = (dequantize_value(k, mu, q) as f64 - y as f64).abs();
        ensure!(err <= q as f64 / 2.0, "y={y} mu={mu} q={q}: error {err}");
        worst = worst.max(err / q as f64);
    }
    Ok(format!("10^6 samples, worst |err|/q = {worst:.6}"))
}

fn context_causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (c, h, w) = (16, 9, 11);
    let s = Shape::new(1, c, h, w);
    for sched in ContextSchedule::ALL {
        let masks = context_phases(sched, s).map_err(e)?;
        for i in 0..s.numel() {
            let n = masks.iter().filter(|m| m[i]).count();
            ensure!(n == 1, "{sched}: element {i} in {n} phases");
        }
        let model = ContextModel::random(sched, c, true, rng.gen()).map_err(e)?;
        let prior = random_tensor(Shape::new(1, 2 * c, h, w), &mut rng);
        let latent = random_tensor(s, &mut rng);
        for (p, mask) in masks.iter().enumerate() {
            let (mu0, q0) = model.predict(&prior, &latent, p).map_err(e)?;
            let later: Vec<usize> = (0..s.numel()).filter(|&i| masks[p..].iter().any(|m| m[i])).collect();
            for _ in 0..25 {
                let j = later[rng.gen_range(0..later.len())];
                let mut pert = latent.clone();
                pert.data_mut()[j] += rng.gen_range(-50.0..50.0);
                let (mu1, q1) = model.predict(&prior, &pert, p).map_err(e)?;
                for i in (0..s.numel()).filter(|&i| mask[i]) {
                    ensure!(
                        mu0.data()[i] == mu1.data()[i] && q0.data()[i] == q1.data()[i],
                        "{sched}: phase {p} output {i} changed after perturbing {j}"
                    );
                }
            }
        }
    }
    Ok("4 schedules: masks partition, no later-phase leakage".into())
}

fn quality_control() -> Outcome {
    for l in 0..LEVEL_COUNT {
        let emb = level_embedding(QualityLevel::new(l).map_err(e)?);
        let sum: f32 = emb.iter().sum();
        let nz = emb.iter().filter(|&&v| v != 0.0).count();
        ensure!((sum - 1.0).abs() <= 1e-6 && nz <= 2, "level {l}: sum {sum}, {nz} nonzero");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = 12;
    let gains = GainTable::new(
        (0..8).map(|_| (0..c).map(|_| rng.gen_range(0.05..8.0)).collect()).collect(),
    )
    .map_err(e)?;
    let y = Tensor::from_fn(Shape::new(1, c, 5, 7), |_, _, _, _| rng.gen_range(-30.0..30.0));
    let mut worst = 0f32;
    for l in 0..LEVEL_COUNT {
        let l = QualityLevel::new(l).map_err(e)?;
        let g = apply_level_gain(&y, l, &gains, GainDirection::Forward).map_err(e)?;
        let back = apply_level_gain(&g, l, &gains, GainDirection::Inverse).map_err(e)?;
        worst = worst.max(rel_diff(&back, &y));
    }
    ensure!(worst <= 1e-6, "gain roundtrip relative error {worst:e}");
    Ok(format!("71 embeddings valid, gain roundtrip rel err {worst:.1e}"))
}

fn eval_math() -> Outcome {
    let anchor: Vec<RdPoint> = [(0.1, 28.0), (0.25, 31.5), (0.5, 34.2), (1.0, 37.1), (2.0, 40.3)]
        .iter()
        .map(|&(bpp, quality)| RdPoint { bpp, quality })
        .collect();
    let doubled: Vec<RdPoint> = anchor.iter().map(|p| RdPoint { bpp: 2.0 * p.bpp, ..*p }).collect();
    let same = bd_rate(&anchor, &anchor).map_err(e)?;
    let dbl = bd_rate(&anchor, &doubled).map_err(e)?;
    ensure!(same.abs() < 1e-9, "bd_rate(identical) = {same}");
    ensure!((dbl - 100.0).abs() <= 0.1, "bd_rate(doubled) = {dbl}");

    let rec = |a: &str, b: &str, x, y| PairwiseRecord::new(a, b, x, y).unwrap();
    let even = bayesian_elo(&[rec("a", "b", 500, 500)]).map_err(e)?;
    ensure!((even["a"] - even["b"]).abs() <= 1e-6, "50/50 ratings {even:?}");
    let lop = bayesian_elo(&[rec("a", "b", 800, 200)]).map_err(e)?;
    let gap = lop["a"] - lop["b"];
    let oracle = 400.0 * 4f64.log10();
    ensure!((gap - oracle).abs() <= 5.0, "80/20 gap {gap} vs {oracle}");

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = FloatImage::new(3, 192, 256, (0..3 * 192 * 256).map(|_| rng.gen()).collect()).map_err(e)?;
    let ms = ms_ssim(&x, &x).map_err(e)?;
    ensure!(ms == 1.0, "ms_ssim(x, x) = {ms}");
    let tal0 = tiling_artifact_loss(&x, &x).map_err(e)?;
    let d = 0.03;
    let tal = tiling_artifact_loss(&x, &x.map(|v| v + d)).map_err(e)?;
    ensure!(tal0 == 0.0 && (tal - 5.0 * d).abs() < 1e-12, "TAL {tal0}, offset {tal}");

    let grid = TileGrid::with_core(256, 192, 64, 64).map_err(e)?;
    let b0 = boundary_report(&x, &x, &grid).map_err(e)?.value;
    let stepped = FloatImage::from_fn(3, 192, 256, |c, y, xx| x.at(c, y, xx) + if (64..128).contains(&xx) { d } else { 0.0 });
    let r = boundary_report(&x, &stepped, &grid).map_err(e)?;
    ensure!(b0 == 0.0, "boundary error on identical inputs {b0}");
    for s in &r.seams {
        let want = if s.axis == SeamAxis::Vertical && (s.pos == 64 || s.pos == 128) { d } else { 0.0 };
        ensure!((s.mean - want).abs() < 1e-12, "seam {:?} at {}: {} (want {want})", s.axis, s.pos, s.mean);
    }
    Ok(format!(
        "bd-rate 0 / {dbl:.4}%, elo gap {gap:.2} (closed form {oracle:.2}), ms-ssim 1, TAL and seam oracles exact"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 NAS cardinality", nas_cardinality),
        ("2 kMACs filter", kmacs_filter),
        ("3 reparametrization equivalence", reparam_equivalence),
        ("4 coding losslessness and efficiency", coding_efficiency),
        ("5 determinism", determinism),
        ("6 end-to-end roundtrip", end_to_end),
        ("7 quantization-width contract", width_contract),
        ("8 context causality", context_causality),
        ("9 quality control", quality_control),
        ("10 evaluation math", eval_math),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
