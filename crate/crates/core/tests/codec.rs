use pico::codec::{decode_image, decode_image_pipelined, encode_image, Bitstream, ModelBundle, Preset, QualityLevel};
use pico::coding::ContextSchedule;
use pico::image_io::{read_image, write_image};
use pico::{Error, RgbImage};

fn gradient(w: usize, h: usize) -> RgbImage {
    let data = (0..h)
        .flat_map(|y| (0..w).flat_map(move |x| [(x * 255 / w) as u8, (y * 255 / h) as u8, ((x + y) % 256) as u8]))
        .collect();
    RgbImage::new(w, h, data).unwrap()
}

#[test]
fn every_schedule_roundtrips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient(530, 70);
    let src = dir.path().join("in.png");
    write_image(&src, &img).unwrap();
    let img = read_image(&src).unwrap();
    for (i, sched) in ContextSchedule::ALL.into_iter().enumerate() {
        let bundle = ModelBundle::synthetic(Preset::Tiny, sched, 20 + i as u64).unwrap();
        let wpath = dir.path().join(format!("{sched}.bin"));
        bundle.write(&wpath).unwrap();
        let loaded = ModelBundle::read(&wpath).unwrap();
        assert_eq!(loaded.schedule(), sched);

        let bytes = encode_image(&img, QualityLevel::new(10 * i + 5).unwrap(), &bundle).unwrap();
        assert_eq!(encode_image(&img, QualityLevel::new(10 * i + 5).unwrap(), &loaded).unwrap(), bytes);
        let out = decode_image(&bytes, &loaded).unwrap();
        assert_eq!((out.width, out.height), (530, 70));
        assert_eq!(decode_image_pipelined(&bytes, &bundle).unwrap(), out);

        let dst = dir.path().join(format!("{sched}.ppm"));
        write_image(&dst, &out).unwrap();
        assert_eq!(read_image(&dst).unwrap(), out);
    }
}

#[test]
fn higher_levels_spend_more_bits() {
    let bundle = ModelBundle::synthetic(Preset::Tiny, ContextSchedule::Checkerboard, 5).unwrap();
    let img = gradient(200, 150);
    let lo = encode_image(&img, QualityLevel::new(0).unwrap(), &bundle).unwrap();
    let hi = encode_image(&img, QualityLevel::new(70).unwrap(), &bundle).unwrap();
    assert!(hi.len() > lo.len(), "{} vs {}", hi.len(), lo.len());
}

#[test]
fn damaged_streams_are_rejected() {
    let bundle = ModelBundle::synthetic(Preset::Tiny, ContextSchedule::Grid2x2, 6).unwrap();
    let bytes = encode_image(&gradient(40, 30), QualityLevel::new(30).unwrap(), &bundle).unwrap();
    let mut bad = bytes.clone();
    bad[6] ^= 1;
    assert!(matches!(decode_image(&bad, &bundle), Err(Error::Parse(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Bitstream::parse(&long), Err(Error::Parse(_))));
    assert!(decode_image(&[], &bundle).is_err());
}
