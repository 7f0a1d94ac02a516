//! Implementations behind the subcommands. Everything here is callable as a
//! library so the pipeline and the test suites can drive stages directly.

use std::path::{Path, PathBuf};

use anyhow::Context;
use ndarray::Array3;

use spectrasweep_core::cube::{BandGrid, GrayscaleImage, GrayscaleStack, SpectralCube};
use spectrasweep_core::forward::{simulate_stack, SensorResponse};
use spectrasweep_core::io;
use spectrasweep_core::metrics::{evaluate, MetricReport};
use spectrasweep_core::net::{load_checkpoint, predict, save_checkpoint, train, NetParams};
use spectrasweep_core::optics::{reference_focus_position, schedule_for_bands, FocusSchedule};
use spectrasweep_core::preprocess::{align_stack_with, preprocess_pipeline};
use spectrasweep_core::reconstruct::variational_reconstruct;
use spectrasweep_core::registration::register_label;
use spectrasweep_core::scene::synth;

use crate::config::{
    CommandManifest, DatasetManifest, ReconstructMethod, RunArtifacts, RunConfig, RunManifest,
    COMMAND_MANIFEST_TAG, MANIFEST_TAG,
};
use crate::plot;

/// Sidecar manifest next to an artifact, enough to reproduce it.
fn write_command_manifest(
    command: &str,
    config: &RunConfig,
    inputs: &[(&str, &Path)],
    output: &Path,
) -> anyhow::Result<()> {
    let manifest = CommandManifest {
        manifest: COMMAND_MANIFEST_TAG.to_string(),
        command: command.to_string(),
        config: config.clone(),
        inputs: inputs
            .iter()
            .map(|(k, p)| (k.to_string(), p.to_path_buf()))
            .collect(),
        output: output.to_path_buf(),
    };
    let mut sidecar = output.as_os_str().to_owned();
    sidecar.push(".manifest.json");
    let sidecar = PathBuf::from(sidecar);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| sidecar.display().to_string())
}

fn schedule_from(config: &RunConfig, bands: &BandGrid) -> anyhow::Result<FocusSchedule> {
    if config.positions_mm.is_empty() {
        Ok(schedule_for_bands(&config.lens, &config.geometry, bands)?)
    } else {
        let z0 = reference_focus_position(&config.lens, &config.geometry)?;
        Ok(FocusSchedule::new(
            z0,
            config.lens.lambda0_nm,
            config.positions_mm.clone(),
        )?)
    }
}

fn response_from(config: &RunConfig, num_bands: usize) -> anyhow::Result<SensorResponse> {
    let response = if config.response.is_empty() {
        SensorResponse::flat(num_bands)
    } else {
        SensorResponse {
            weights: config.response.clone(),
        }
    };
    response.validate(num_bands)?;
    Ok(response)
}

/// `synth`: render the configured synthetic scene to a cube file.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let cube = synth(&config.scene)?;
    io::write_cube(&cube, out)?;
    write_command_manifest("synth", config, &[], out)
}

/// `simulate`: render the focal-sweep stack a capture of `input` produces.
pub fn cmd_simulate(config: &RunConfig, input: &Path, out: &Path) -> anyhow::Result<()> {
    let cube = io::read_cube(input)?;
    let schedule = schedule_from(config, cube.bands())?;
    let response = response_from(config, cube.num_bands())?;
    let stack = simulate_stack(
        &cube,
        &config.lens,
        &config.geometry,
        &schedule,
        &response,
        &config.noise,
        &config.sim,
    )?;
    io::write_stack(&stack, out)?;
    write_command_manifest("simulate", config, &[("in", input)], out)
}

/// `preprocess`: align, edge-detect, difference; writes the model-input
/// tensor in the cube container with 1-based transition indices as channel
/// tags.
pub fn cmd_preprocess(config: &RunConfig, input: &Path, out: &Path) -> anyhow::Result<()> {
    let (stack, clamped) = io::read_stack_counting(input)?;
    if clamped > 0 {
        eprintln!(
            "warning: clamped {clamped} out-of-range samples while loading {}",
            input.display()
        );
    }
    let tensor = preprocess_pipeline(&stack, &config.preprocess)?;
    let tags: Vec<f64> = (1..=tensor.dim().0).map(|k| k as f64).collect();
    io::write_tensor3(&tensor, &tags, out)?;
    write_command_manifest("preprocess", config, &[("in", input)], out)
}

/// `register`: map a reference cube into the camera frame's coordinates.
pub fn cmd_register(
    config: &RunConfig,
    cube_path: &Path,
    reference_path: &Path,
    out: &Path,
    report: Option<&Path>,
) -> anyhow::Result<()> {
    let cube = io::read_cube(cube_path)?;
    let reference_stack = io::read_stack(reference_path)?;
    let reference: &GrayscaleImage = &reference_stack.frames()[0];
    let (warped, homography, diagnostics) = register_label(&cube, reference, &config.registration)?;
    io::write_cube(&warped, out)?;
    if let Some(report_path) = report {
        let body = serde_json::json!({
            "homography": homography.m,
            "diagnostics": diagnostics,
        });
        std::fs::write(report_path, serde_json::to_string_pretty(&body)?)
            .with_context(|| report_path.display().to_string())?;
    }
    write_command_manifest(
        "register",
        config,
        &[("in", cube_path), ("reference", reference_path)],
        out,
    )
}

fn reconstruct_variational(
    config: &RunConfig,
    stack: &GrayscaleStack,
) -> anyhow::Result<SpectralCube> {
    let stack = if config.sim.emit_unaligned {
        align_stack_with(stack, &config.preprocess.align)?.stack
    } else {
        stack.clone()
    };
    let z0 = reference_focus_position(&config.lens, &config.geometry)?;
    let schedule = FocusSchedule::new(
        z0,
        config.lens.lambda0_nm,
        stack.lens_positions_mm().to_vec(),
    )?;
    let response = response_from(config, stack.len())?;
    Ok(variational_reconstruct(
        &stack,
        &config.lens,
        &config.geometry,
        &schedule,
        &response,
        &config.solver,
    )?)
}

fn reconstruct_net(
    config: &RunConfig,
    params: &NetParams,
    input: &Array3<f64>,
) -> anyhow::Result<SpectralCube> {
    let bands = BandGrid::new(config.scene.bands_nm.clone())?;
    Ok(predict(params, input, &bands)?)
}

/// `reconstruct`: variational from a stack file, or network inference from a
/// model-input tensor plus a checkpoint.
pub fn cmd_reconstruct(
    config: &RunConfig,
    method: ReconstructMethod,
    input: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let cube = match method {
        ReconstructMethod::Variational => {
            let stack = io::read_stack(input)?;
            reconstruct_variational(config, &stack)?
        }
        ReconstructMethod::Net => {
            let checkpoint = checkpoint
                .ok_or_else(|| anyhow::anyhow!("--checkpoint is required with --method net"))?;
            let params = load_checkpoint(checkpoint)?;
            let (tensor, _) = io::read_tensor3(input)?;
            reconstruct_net(config, &params, &tensor)?
        }
    };
    io::write_cube(&cube, out)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("in", input)];
    if let Some(ckpt) = checkpoint {
        inputs.push(("checkpoint", ckpt));
    }
    write_command_manifest("reconstruct", config, &inputs, out)
}

/// `train`: fit the network on a dataset manifest and write a checkpoint.
pub fn cmd_train(
    config: &RunConfig,
    data: &Path,
    out: &Path,
    curve_out: Option<&Path>,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(data).with_context(|| data.display().to_string())?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).with_context(|| data.display().to_string())?;
    if manifest.pairs.is_empty() {
        anyhow::bail!("dataset manifest lists no pairs");
    }
    let mut dataset = Vec::with_capacity(manifest.pairs.len());
    let mut bands: Option<BandGrid> = None;
    for pair in &manifest.pairs {
        let (input, _) = io::read_tensor3(&pair.input)?;
        let target = io::read_cube(&pair.target)?;
        if bands.is_none() {
            bands = Some(target.bands().clone());
        }
        let (grid, data) = target.into_parts();
        let _ = grid;
        dataset.push((input, data));
    }
    let bands = bands.expect("non-empty dataset");
    let mut train_config = config.train.clone();
    train_config.net.c_in = dataset[0].0.dim().0;
    train_config.net.c_out = dataset[0].1.dim().0;
    let (params, curve) = train(&dataset, &train_config, &bands)?;
    save_checkpoint(&params, out)?;
    if let Some(curve_path) = curve_out {
        std::fs::write(curve_path, serde_json::to_string_pretty(&curve)?)
            .with_context(|| curve_path.display().to_string())?;
    }
    write_command_manifest("train", config, &[("data", data)], out)
}

/// `eval`: metric report for prediction/truth cube pairs, as JSON plus an
/// aligned text table on stdout.
pub fn cmd_eval(
    predictions: &[PathBuf],
    truths: &[PathBuf],
    out: Option<&Path>,
) -> anyhow::Result<MetricReport> {
    if predictions.len() != truths.len() {
        anyhow::bail!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        );
    }
    let preds: Vec<SpectralCube> = predictions
        .iter()
        .map(|p| io::read_cube(p).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let trues: Vec<SpectralCube> = truths
        .iter()
        .map(|p| io::read_cube(p).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let report = evaluate(&preds, &trues)?;
    println!("{}", report.table_string());
    if let Some(out_path) = out {
        std::fs::write(out_path, serde_json::to_string_pretty(&report)?)
            .with_context(|| out_path.display().to_string())?;
    }
    Ok(report)
}

/// `plot`: CSV + SVG spectral signature of one pixel.
pub fn cmd_plot(
    prediction: &Path,
    truth: &Path,
    pixel: (usize, usize),
    out_csv: &Path,
    out_svg: &Path,
) -> anyhow::Result<()> {
    let pred = io::read_cube(prediction)?;
    let trut = io::read_cube(truth)?;
    let data = plot::signature_at(&pred, &trut, pixel.0, pixel.1)?;
    plot::write_csv(&data, out_csv)?;
    plot::write_svg(&data, out_svg)?;
    Ok(())
}

/// `pipeline`: synth, simulate, preprocess, reconstruct, evaluate; writes
/// all artifacts plus a manifest that reproduces the run.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> anyhow::Result<RunManifest> {
    std::fs::create_dir_all(out_dir).with_context(|| out_dir.display().to_string())?;
    let stage = |name: &'static str| move |e: anyhow::Error| e.context(format!("stage {name}"));

    let truth = synth(&config.scene).map_err(|e| stage("synth")(e.into()))?;
    let truth_path = out_dir.join("truth.mscube");
    io::write_cube(&truth, &truth_path).map_err(|e| stage("synth")(e.into()))?;

    let schedule = schedule_from(config, truth.bands()).map_err(stage("simulate"))?;
    let response = response_from(config, truth.num_bands()).map_err(stage("simulate"))?;
    let stack = simulate_stack(
        &truth,
        &config.lens,
        &config.geometry,
        &schedule,
        &response,
        &config.noise,
        &config.sim,
    )
    .map_err(|e| stage("simulate")(e.into()))?;
    let stack_path = out_dir.join("stack.gstack");
    io::write_stack(&stack, &stack_path).map_err(|e| stage("simulate")(e.into()))?;

    let model_input = preprocess_pipeline(&stack, &config.preprocess)
        .map_err(|e| stage("preprocess")(e.into()))?;
    let input_path = out_dir.join("model_input.mscube");
    let tags: Vec<f64> = (1..=model_input.dim().0).map(|k| k as f64).collect();
    io::write_tensor3(&model_input, &tags, &input_path)
        .map_err(|e| stage("preprocess")(e.into()))?;

    let mut resolved = config.clone();
    let reconstruction = match config.method {
        ReconstructMethod::Variational => {
            reconstruct_variational(config, &stack).map_err(stage("reconstruct"))?
        }
        ReconstructMethod::Net => {
            // toy-scale demonstration: overfit the run's own sample, then
            // predict from it
            resolved.train.net.c_in = model_input.dim().0;
            resolved.train.net.c_out = truth.num_bands();
            let dataset = vec![(model_input.clone(), truth.data().clone())];
            let (params, _) = train(&dataset, &resolved.train, truth.bands())
                .map_err(|e| stage("reconstruct")(e.into()))?;
            let checkpoint_path = out_dir.join("net.ssnet");
            save_checkpoint(&params, &checkpoint_path)
                .map_err(|e| stage("reconstruct")(e.into()))?;
            predict(&params, &model_input, truth.bands())
                .map_err(|e| stage("reconstruct")(e.into()))?
        }
    };
    let recon_path = out_dir.join("reconstruction.mscube");
    io::write_cube(&reconstruction, &recon_path).map_err(|e| stage("reconstruct")(e.into()))?;

    let report = evaluate(&[reconstruction], &[truth]).map_err(|e| stage("eval")(e.into()))?;
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| stage("eval")(anyhow::Error::from(e)))?;
    println!("{}", report.table_string());

    let manifest = RunManifest {
        manifest: MANIFEST_TAG.to_string(),
        config: resolved,
        artifacts: RunArtifacts {
            truth_cube: truth_path,
            stack: stack_path,
            model_input: input_path,
            reconstruction: recon_path,
            report: report_path,
        },
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| manifest_path.display().to_string())?;
    Ok(manifest)
}
