use rednet::data::synth_samples;
use rednet::data::{EdgeGroundTruth, RasterImage};
use rednet::model::{build_model, rednet_forward, Mode, ModelParameters, RedNetConfig, Session};
use rednet::tensor::Tensor;
use rednet::training::{deep_supervised_loss_on_tape, stack_images, LossWeights};

fn batch(n: usize, size: usize, seed: u64) -> (Tensor<f64>, Vec<EdgeGroundTruth>) {
    let samples = synth_samples(n, size, seed);
    let images: Vec<RasterImage> = samples.iter().map(|s| s.image.clone()).collect();
    (stack_images(&images).unwrap(), samples.into_iter().map(|s| s.gt).collect())
}

/// Fresh parameters whose running statistics come from one training-mode pass.
fn desk(depth: usize, seed: u64) -> ModelParameters<f64> {
    let mut params = build_model(&RedNetConfig::desk().with_depth(depth), seed).unwrap();
    let (image, _) = batch(2, 32, seed + 100);
    let updates = {
        let mut s = Session::new(&params, Mode::Train);
        let x = s.tape.leaf(image);
        s.forward(x, depth).unwrap();
        s.norm_updates().to_vec()
    };
    params.apply_norm_updates(&updates).unwrap();
    params
}

#[test]
fn recursion_unrolls_into_repeated_steps() {
    let params = desk(3, 1);
    let (image, _) = batch(1, 32, 1);
    let maps = rednet_forward(&params, &image, 3).unwrap();
    assert_eq!(maps.len(), 4);

    let mut session = Session::new(&params, Mode::Infer);
    let x = session.tape.leaf(image.clone());
    let mut edge = session.tape.leaf(Tensor::zeros(&[1, 1, 32, 32]));
    for expected in &maps {
        edge = session.step(x, edge).unwrap();
        assert_eq!(session.tape.value(edge), expected);
    }

    let shallow = rednet_forward(&params, &image, 1).unwrap();
    assert_eq!(shallow[..], maps[..2]);

    let mut resumed = Session::new(&params, Mode::Infer);
    let x = resumed.tape.leaf(image);
    let start = resumed.tape.leaf(maps[1].clone());
    let tail = resumed.forward_from(x, start, 1).unwrap();
    assert_eq!(resumed.tape.value(tail.edge_maps[0]), &maps[2]);
    assert_eq!(resumed.tape.value(tail.edge_maps[1]), &maps[3]);
}

#[test]
fn edge_channel_changes_the_next_prediction() {
    let params = desk(1, 2);
    let (image, _) = batch(1, 32, 2);
    let run = |fill: f64| {
        let mut s = Session::new(&params, Mode::Infer);
        let x = s.tape.leaf(image.clone());
        let e = s.tape.leaf(Tensor::full(&[1, 1, 32, 32], fill));
        let out = s.step(x, e).unwrap();
        s.tape.value(out).clone()
    };
    assert_ne!(run(0.0), run(1.0));
}

#[test]
fn every_skip_connection_reaches_the_output() {
    let params = desk(0, 3);
    let (image, _) = batch(1, 32, 3);
    let mut s = Session::new(&params, Mode::Infer);
    let x = s.tape.leaf(image);
    let blank = s.tape.leaf(Tensor::zeros(&[1, 1, 32, 32]));
    let input = s.tape.concat_channels(x, blank).unwrap();
    let (bottleneck, skips) = s.encoder(input).unwrap();
    let reference = s.decoder(bottleneck, &skips).unwrap();
    let reference = s.tape.value(reference).clone();
    for i in 0..skips.len() {
        let mut cut = skips;
        let zeros = Tensor::zeros(s.tape.value(skips[i]).shape());
        cut[i] = s.tape.leaf(zeros);
        let out = s.decoder(bottleneck, &cut).unwrap();
        assert_ne!(s.tape.value(out), &reference, "skip {i} has no effect");
    }
}

#[test]
fn gradients_reach_every_learnable_tensor() {
    let depth = 2;
    let params = desk(depth, 4);
    let (image, gts) = batch(2, 32, 4);
    let mut s = Session::new(&params, Mode::Train);
    let x = s.tape.leaf(image);
    let out = s.forward(x, depth).unwrap();
    let (loss, parts) = deep_supervised_loss_on_tape(&mut s.tape, &out.edge_maps, &gts, &LossWeights::increasing(depth)).unwrap();
    assert_eq!(parts.len(), depth + 1);
    s.tape.backward(loss).unwrap();
    let grads = s.param_grads();
    assert_eq!(grads.len(), params.iter().count());
    for (name, g) in &grads {
        let norm: f64 = g.iter().map(|v| v * v).sum();
        assert!(norm > 0.0 && norm.is_finite(), "{name} gradient norm {norm}");
    }
    assert_eq!(s.norm_updates().len(), params.running_iter().count() * (depth + 1));
}

#[test]
fn parameter_counts_match_channel_arithmetic() {
    // Per conv layer cin*cout*k*k weights plus gamma and beta; transposed convs
    // c*c*4*4; head width*5*5 + 1. Summed by hand over both presets.
    assert_eq!(rednet::model::parameter_count(&RedNetConfig::desk()).unwrap(), 969_801);
    assert_eq!(rednet::model::parameter_count(&RedNetConfig::paper()).unwrap(), 61_869_633);
}
