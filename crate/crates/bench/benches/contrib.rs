use codec_core::contrib::{batch_contributions, contribution, ContribMethod, Execution, TargetSpec};
use codec_core::metrics::{ChannelContributionMatrix, SignMode};
use codec_core::sae::{train_sae, SaeConfig};
use codec_core::zoo::{build_toy_cnn, generate_dataset, DatasetSpec, ToyCnnConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn contributions(c: &mut Criterion) {
    let model = build_toy_cnn(&ToyCnnConfig::default()).unwrap();
    let data = generate_dataset(&DatasetSpec::shapes(64, 6, 0)).unwrap();
    let x = &data.inputs[0];
    let target = TargetSpec::top1();

    c.bench_function("forward", |b| b.iter(|| model.forward(x).unwrap()));

    let mut g = c.benchmark_group("single_input");
    for (name, method) in [
        ("actgrad", ContribMethod::actgrad()),
        ("hinput_grad", ContribMethod::hinput_grad()),
        ("hidden_ig_10", ContribMethod::default_ig()),
    ] {
        for tap in ["conv2", "res_out"] {
            g.bench_with_input(BenchmarkId::new(name, tap), &tap, |b, tap| {
                b.iter(|| contribution(&model, x, tap, &target, &method).unwrap())
            });
        }
    }
    g.finish();

    let mut g = c.benchmark_group("batch64_hidden_ig");
    g.sample_size(10);
    for (name, exec) in [("serial", Execution::Serial), ("parallel", Execution::Parallel)] {
        g.bench_function(name, |b| {
            b.iter(|| batch_contributions(&model, &data.inputs, "res_out", &target, &ContribMethod::default_ig(), exec).unwrap())
        });
    }
    g.finish();

    let cts = batch_contributions(&model, &data.inputs, "res_out", &target, &ContribMethod::actgrad(), Execution::Serial).unwrap();
    let m = ChannelContributionMatrix::from_contributions(&cts, SignMode::Positive).unwrap();
    let cfg = SaeConfig {
        epochs: 5,
        ..SaeConfig::default()
    };
    let mut g = c.benchmark_group("sae");
    g.sample_size(10);
    g.bench_function("five_epochs_64x24", |b| b.iter(|| train_sae(&m.values, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, contributions);
criterion_main!(benches);
