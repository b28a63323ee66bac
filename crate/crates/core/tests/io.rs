use lfsynth::io::{load_lightfield, metadata_path, save_image, save_lightfield, LightFieldMeta};
use lfsynth::lightfield::{Angular, Image, LightField, ViewIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(seed: u64, levels: u32) -> LightField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Angular::new(8, 8);
    let data = (0..64 * 3 * 24 * 32).map(|_| rng.gen_range(0..=levels) as f32 / levels as f32).collect();
    LightField::new(a, ViewIndex::new(4, 4), 0.8, 3, 24, 32, data).unwrap()
}

#[test]
fn eight_bit_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let lf = random_field(1, 255);
    let (p, q) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_lightfield(&lf, &p, 8).unwrap();
    let back = load_lightfield(&p).unwrap();
    assert_eq!(back, lf);
    save_lightfield(&back, &q, 8).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn sixteen_bit_keeps_single_steps() {
    let dir = tempfile::tempdir().unwrap();
    let a = Angular::new(2, 2);
    let data: Vec<f32> = (0..4 * 5 * 7).map(|i| (30000 + i) as f32 / 65535.0).collect();
    let lf = LightField::new(a, ViewIndex::new(1, 1), 0.8, 1, 5, 7, data).unwrap();
    let p = dir.path().join("g.png");
    save_lightfield(&lf, &p, 16).unwrap();
    let back = load_lightfield(&p).unwrap();
    assert_eq!(back, lf);
    let d = back.data();
    assert_eq!(((d[1] - d[0]) * 65535.0).round(), 1.0);
}

#[test]
fn tile_grid_mismatch_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lf.png");
    save_lightfield(&random_field(2, 255), &p, 8).unwrap();
    let meta_path = metadata_path(&p);
    let mut meta: LightFieldMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path).unwrap()).unwrap();

    // Image holding 7 tile columns while the metadata claims 8.
    let narrow = Image::from_fn(3, 24 * 8, 32 * 7, |_, _, _| 0.5);
    save_image(&narrow, &p, 8).unwrap();
    let err = load_lightfield(&p).unwrap_err().to_string();
    assert!(err.contains("ang_u") && err.contains("lf.json"), "{err}");

    save_image(&Image::from_fn(3, 24 * 8, 32 * 8, |_, _, _| 0.5), &p, 8).unwrap();
    meta.center_u = 8;
    std::fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
    assert!(load_lightfield(&p).unwrap_err().to_string().contains("center"));

    meta.center_u = 4;
    meta.bit_depth = 16;
    std::fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
    assert!(load_lightfield(&p).unwrap_err().to_string().contains("bit_depth"));

    std::fs::write(&meta_path, "{\"ang_u\": 8}").unwrap();
    assert!(load_lightfield(&p).unwrap_err().to_string().contains("missing field"));
}
