use pico::image_io::{write_image, RgbImage};
use pico::metrics::{
    bayesian_elo, bd_rate, curve, evaluate_dirs, read_rd_csv, read_votes, write_rd_csv, RdRow,
};

#[test]
fn rd_files_feed_bd_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (codec, f) in [("anchor", 1.0), ("test", 0.8)] {
        for (level, (bpp, psnr)) in [(0.1, 28.0), (0.3, 32.0), (0.6, 35.0), (1.2, 38.5)].into_iter().enumerate() {
            rows.push(RdRow {
                codec: codec.into(),
                level: level as u32 * 10,
                bpp: bpp * f,
                metric: "psnr".into(),
                value: psnr,
            });
        }
    }
    let path = dir.path().join("rd.csv");
    write_rd_csv(&path, &rows).unwrap();
    let back = read_rd_csv(&path).unwrap();
    assert_eq!(back, rows);
    let bd = bd_rate(&curve(&back, "anchor", "psnr"), &curve(&back, "test", "psnr")).unwrap();
    assert!((bd + 20.0).abs() < 1e-6, "{bd}");
}

#[test]
fn votes_file_feeds_elo() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("votes.csv");
    std::fs::write(&path, "a,b,wins_a,wins_b\nours,jpeg,90,10\nours,av1,60,40\nav1,jpeg,80,20\n").unwrap();
    let r = bayesian_elo(&read_votes(&path).unwrap()).unwrap();
    assert!(r["ours"] > r["av1"] && r["av1"] > r["jpeg"]);
    assert!(r.values().sum::<f64>().abs() < 1e-9);
    std::fs::write(&path, "a,b,wins_a,wins_b\nx,y,0,0\n").unwrap();
    assert!(read_votes(&path).is_err());
}

#[test]
fn directory_evaluation_flags_seams() {
    let (r, t) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (w, h) = (128, 64);
    let img = RgbImage::new(w, h, (0..w * h * 3).map(|i| (i * 31 % 200) as u8).collect()).unwrap();
    let mut shifted = img.clone();
    for y in 0..h {
        for x in 64..w {
            for c in 0..3 {
                shifted.data[(y * w + x) * 3 + c] += 10;
            }
        }
    }
    write_image(&r.path().join("x.png"), &img).unwrap();
    write_image(&t.path().join("x.png"), &shifted).unwrap();
    let s = evaluate_dirs(r.path(), t.path(), (64, 64)).unwrap();
    assert_eq!(s.len(), 1);
    assert!((s[0].boundary - 10.0 / 255.0).abs() < 1e-9, "{}", s[0].boundary);
    assert!(s[0].tal > 0.0 && s[0].ms_ssim < 1.0);
}
