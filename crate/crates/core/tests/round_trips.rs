use std::fs::File;
use std::io::{BufReader, BufWriter};

use framecache::graph::{
    build_multibranch_preset, build_unet, build_unetpp, BuildOptions, CacheLabel, NetworkSpec,
};
use framecache::workload::{generate, read_sequence, write_sequence, SceneConfig};
use framecache::{Shape, Tensor};

#[test]
fn network_json_round_trip_preserves_outputs() {
    let input = Shape::new(6, 16, 16);
    let opts = BuildOptions {
        out_channels: 3,
        seed: 9,
    };
    let specs = [
        build_unet(3, 4, input, &opts)
            .unwrap()
            .with_cache(&CacheLabel::UnetLevel(2))
            .unwrap(),
        build_unetpp(3, 4, input, &opts)
            .unwrap()
            .with_cache(&CacheLabel::UnetppConfigA)
            .unwrap(),
        build_multibranch_preset(input, 3, 9).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let x = Tensor::from_fn(input, |c, y, x| ((c * 31 + y * 7 + x) % 13) as f32 / 13.0).unwrap();
    for (i, spec) in specs.iter().enumerate() {
        let path = dir.path().join(format!("net{i}.json"));
        std::fs::write(&path, spec.to_json()).unwrap();
        let back = NetworkSpec::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.cache_config(), spec.cache_config());
        assert_eq!(back.full_flops(), spec.full_flops());
        assert_eq!(back.cached_flops(), spec.cached_flops());
        let (a, b) = (
            spec.forward_full(&x).unwrap(),
            back.forward_full(&x).unwrap(),
        );
        assert_eq!(a.output, b.output);
        assert_eq!(a.edge_tensors, b.edge_tensors);
    }
}

#[test]
fn network_json_rejects_corruption() {
    let spec = build_unet(2, 2, Shape::new(6, 8, 8), &BuildOptions::default()).unwrap();
    let json = spec.to_json();
    assert!(NetworkSpec::from_json(&json.replace("\"version\":1", "\"version\":7")).is_err());
    assert!(NetworkSpec::from_json(&json[..json.len() / 2]).is_err());
}

#[test]
fn sequence_file_round_trip() {
    let scene = SceneConfig {
        seed: 42,
        channels: 8,
        height: 12,
        width: 20,
        sprite_count: 1,
        ..SceneConfig::default()
    };
    let seq = generate(&scene, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.fseq");
    write_sequence(&seq, BufWriter::new(File::create(&path).unwrap())).unwrap();

    let header = 4 + 5 * 4 + 8;
    let per_frame = (8 + 2) * 12 * 20 * 4;
    assert_eq!(
        std::fs::metadata(&path).unwrap().len(),
        (header + 5 * per_frame) as u64
    );

    let file = read_sequence(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(file.seed, 42);
    assert_eq!(file.frames, seq.frames);

    let bytes = std::fs::read(&path).unwrap();
    assert!(read_sequence(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_sequence(&bad[..]).is_err());
}
