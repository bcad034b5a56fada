"""
Command-line interface for Portrait Lab
"""

import json
import logging
import sqlite3
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
import typer
from rich.panel import Panel

from . import __version__
from .config import CONFIG_VERSION, ExperimentConfig, config, load_config, save_config
from .database import Database
from .dataset import read_dataset, read_index, write_dataset, write_records
from .editing import EditingSession, load_session, parse_edits
from .encoder import (
    EncoderBundle, load_encoder, load_regressor, save_encoder, save_regressor, train_regressor,
)
from .errors import ArgumentError, PortraitLabError
from .flows import load_flow, mean_nll, save_flow, train_flows
from .generator import (
    corpus_from_dataset, embed_view, load_generator, pretrain_generator, read_corpus, render, render_batch,
    sample_training_corpus, save_generator, verify_corpus, write_corpus,
)
from .grids import GRID_KINDS, build_grid, emit_grid
from .imaging import file_digest, load_png, save_png, write_json_atomic
from .metrics import attribute_inconsistency, build_report, fid_proxy, identity_score, psnr, ssim
from .models import StyleCode, ViewCode
from .predictor import load_predictor, predict_attributes, save_predictor, train_attribute_predictor
from .scene import attribute_oracle, make_oracle_lookup, render_scenes, sample_scene_coeffs
from .training import corpus_inputs, encode_images, summarize_log, train_encoder
from .ui import (
    console, display_artifacts, display_codes, display_metric_report, display_reports,
    display_training_summary, print_error, print_header, print_info, print_success, print_warning,
)
from .video import (
    edit_sequence, finetune_generator, invert_sequence, make_toy_video,
    read_sequence_codes, write_sequence_codes,
)

app = typer.Typer(add_completion=False, help="3D-aware portrait inversion and attribute editing")
scene_app = typer.Typer(help="Procedural portrait datasets")
gen_app = typer.Typer(help="Generator pretraining, corpora and rendering")
enc_app = typer.Typer(help="Coefficient regressor and encoding")
train_app = typer.Typer(help="Encoder training")
flow_app = typer.Typer(help="Attribute flows and editing")
video_app = typer.Typer(help="Video inversion, fine-tuning and editing")
eval_app = typer.Typer(help="Metrics, attribute predictor and figure grids")

app.add_typer(scene_app, name="scene")
app.add_typer(gen_app, name="gen")
app.add_typer(enc_app, name="enc")
app.add_typer(train_app, name="train")
app.add_typer(flow_app, name="flow")
app.add_typer(video_app, name="video")
app.add_typer(eval_app, name="eval")

ConfigOption = typer.Option(None, "--config", "-c", help="Experiment config (JSON)")


@contextmanager
def handle_errors():
    """Report library errors in red and exit with their code"""
    try:
        yield
    except PortraitLabError as e:
        print_error(str(e))
        raise typer.Exit(code=e.exit_code)


def _experiment(path: Optional[Path]) -> ExperimentConfig:
    path = path or (Path(config.DEFAULT_CONFIG_PATH) if config.DEFAULT_CONFIG_PATH else None)
    experiment = load_config(path) if path else ExperimentConfig()
    torch.set_default_dtype(torch.float32)
    return experiment


def _register(kind: str, path, experiment: ExperimentConfig, sha256: str = "", metadata: Optional[Dict] = None):
    """Record an artifact; the registry never blocks a command"""
    try:
        db = Database(config.DB_PATH)
        db.add_artifact(kind, Path(path).resolve(), sha256, experiment.config_hash(), metadata)
        db.close()
    except (sqlite3.Error, OSError) as e:
        logging.warning(f"Could not register {kind} artifact {path}: {str(e)}")


def _register_report(name: str, path, report, experiment: ExperimentConfig):
    try:
        db = Database(config.DB_PATH)
        db.add_report(name, report.aggregates, Path(path).resolve(), experiment.config_hash())
        db.close()
    except (sqlite3.Error, OSError) as e:
        logging.warning(f"Could not register {name} report: {str(e)}")


def _bundle(experiment: ExperimentConfig, enc_ckpt: Path, regressor: Optional[Path],
            dataset: Optional[Path]) -> EncoderBundle:
    lookup = make_oracle_lookup(read_dataset(dataset)) if dataset else None
    return EncoderBundle(load_encoder(enc_ckpt), load_regressor(regressor) if regressor else None,
                         lookup, experiment.scene)


def _frames(path: Path) -> torch.Tensor:
    """Images of any directory in the dataset layout, in sample order"""
    payload = read_index(path)
    try:
        return torch.stack([load_png(Path(path) / sample["image"]) for sample in payload["samples"]])
    except (KeyError, TypeError) as e:
        raise ArgumentError(f"{path} has a malformed sample record: {e}")


def _hashes(**paths) -> Dict[str, str]:
    return {name: file_digest(path) for name, path in paths.items() if path}


def _write_report(report, out: Optional[Path], name: str, experiment: ExperimentConfig):
    display_metric_report(report, title=name)
    if out:
        write_json_atomic(report.to_dict(), out)
        _register_report(name, out, report, experiment)
        print_success(f"Report written to {out}")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    """Portrait Lab: 3D-aware portrait inversion and attribute editing"""
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)


@app.command("init-config")
def init_config(out: Path = typer.Argument(..., help="Where to write the default config")):
    """Write the default experiment config as JSON"""
    with handle_errors():
        experiment = ExperimentConfig()
        save_config(experiment, out)
        print_success(f"Default config written to {out} (hash {experiment.config_hash()[:12]})")


@app.command("version")
def version():
    """Show the installed version"""
    print_header()
    console.print(Panel(f"Config version {CONFIG_VERSION}, code version {__version__}", expand=False))


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------

@scene_app.command("gen")
def scene_gen(out: Path = typer.Option(..., "--out", help="Dataset directory"),
              count: int = typer.Option(1000, help="Number of scenes"),
              identities: int = typer.Option(100, help="Number of distinct identities"),
              seed: int = typer.Option(0, help="Sampler seed"),
              resolution: Optional[int] = typer.Option(None, help="32, 64 or 128"),
              overwrite: bool = typer.Option(False, "--overwrite", help="Replace an existing dataset"),
              config_path: Optional[Path] = ConfigOption):
    """Render a procedural dataset with oracle attributes"""
    with handle_errors():
        experiment = _experiment(config_path)
        scene_cfg = experiment.scene
        resolution = resolution or scene_cfg.resolution
        specs = sample_scene_coeffs(seed, count, identities, scene_cfg)
        images = render_scenes(specs, resolution, scene_cfg)
        attributes = [attribute_oracle(spec, scene_cfg) for spec in specs]
        dataset = write_dataset(specs, images, attributes, out, overwrite=overwrite, metadata={
            "kind": "scenes", "seed": seed, "resolution": resolution, "config_hash": experiment.config_hash(),
        })
        _register("dataset", out, experiment, file_digest(out / "index.json"), {"count": len(dataset)})
        print_success(f"Wrote {len(dataset)} scenes ({identities} identities) to {out}")


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

@gen_app.command("pretrain")
def gen_pretrain(dataset: Path = typer.Option(..., "--dataset", help="Procedural dataset"),
                 out: Path = typer.Option(..., "--out", help="Generator checkpoint"),
                 steps: Optional[int] = typer.Option(None, help="Override generator.steps"),
                 log_dir: Optional[Path] = typer.Option(None, help="Step log and diagnostics directory"),
                 config_path: Optional[Path] = ConfigOption):
    """Adversarially pretrain the NeRF generator"""
    with handle_errors():
        experiment = _experiment(config_path)
        result = pretrain_generator(read_dataset(dataset), experiment, steps, log_dir)
        metadata = dict(result.metadata(), config_hash=experiment.config_hash(), seed=experiment.seed)
        save_generator(result.generator, out, metadata)
        _register("generator", out, experiment, file_digest(out), {"steps_run": result.steps_run})
        if result.fid_history:
            print_info(f"Final FID proxy: {result.fid_history[-1][1]:.4f}")
        print_success(f"Generator checkpoint written to {out} after {result.steps_run} steps")


@gen_app.command("sample-corpus")
def gen_sample_corpus(gen_ckpt: Path = typer.Option(..., "--gen-ckpt", help="Generator checkpoint"),
                      out: Path = typer.Option(..., "--out", help="Corpus directory"),
                      count: Optional[int] = typer.Option(None, help="Override generator.corpus_size"),
                      seed: Optional[int] = typer.Option(None, help="Defaults to the config seed"),
                      verify: bool = typer.Option(False, "--verify", help="Re-render and compare every record"),
                      overwrite: bool = typer.Option(False, "--overwrite"),
                      config_path: Optional[Path] = ConfigOption):
    """Sample a style-mixed inversion corpus with ground-truth codes"""
    with handle_errors():
        experiment = _experiment(config_path)
        generator = load_generator(gen_ckpt)
        seed = experiment.seed if seed is None else seed
        corpus = sample_training_corpus(generator, count or experiment.generator.corpus_size, seed,
                                        experiment.scene, experiment.generator.render_chunk)
        write_corpus(corpus, out, overwrite=overwrite, metadata={
            "seed": seed, "config_hash": experiment.config_hash(), "generator_sha256": file_digest(gen_ckpt),
        })
        if verify:
            mismatches = verify_corpus(generator, read_corpus(out))
            if mismatches:
                print_warning(f"{mismatches} corpus records do not re-render bitwise")
            else:
                print_info("Every corpus record re-renders bitwise")
        _register("corpus", out, experiment, file_digest(out / "index.json"), {"count": len(corpus)})
        print_success(f"Wrote a corpus of {len(corpus)} samples to {out}")


def _read_json(path: Path) -> Dict:
    try:
        with open(path, "r") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise ArgumentError(f"Cannot read {path}: {e}")


@gen_app.command("render")
def gen_render(gen_ckpt: Path = typer.Option(..., "--gen-ckpt", help="Generator checkpoint"),
               w_file: Path = typer.Option(..., "--w-file", help="JSON with w_geo and w_tex"),
               d_file: Path = typer.Option(..., "--d-file", help="JSON with d, or camera and pose"),
               out: Path = typer.Option(..., "--out", help="Output PNG"),
               resolution: Optional[int] = typer.Option(None, help="Output resolution")):
    """Render one image from explicit codes"""
    with handle_errors():
        generator = load_generator(gen_ckpt)
        w = _read_json(w_file)
        d = _read_json(d_file)
        try:
            style = StyleCode(torch.tensor(w["w_geo"], dtype=torch.float32),
                              torch.tensor(w["w_tex"], dtype=torch.float32))
            if "d" in d:
                view = ViewCode(torch.tensor(d["d"], dtype=torch.float32))
            else:
                view = embed_view(torch.tensor(d["camera"]), torch.tensor(d["pose"]), generator.arch["d_dim"])
        except (KeyError, TypeError, ValueError) as e:
            raise ArgumentError(f"Malformed code file: {e}")
        with torch.no_grad():
            image = render(generator, style, view, resolution)
        save_png(image, out)
        print_success(f"Rendered {tuple(image.shape[-2:])} image to {out}")


# ---------------------------------------------------------------------------
# enc
# ---------------------------------------------------------------------------

@enc_app.command("train-regressor")
def enc_train_regressor(dataset: Path = typer.Option(..., "--dataset", help="Procedural dataset"),
                        out: Path = typer.Option(..., "--out", help="Regressor checkpoint"),
                        steps: Optional[int] = typer.Option(None, help="Override encoder.regressor_steps"),
                        log_dir: Optional[Path] = typer.Option(None),
                        config_path: Optional[Path] = ConfigOption):
    """Train the image -> morphable coefficient regressor"""
    with handle_errors():
        experiment = _experiment(config_path)
        regressor, metrics = train_regressor(read_dataset(dataset), experiment, steps, log_dir)
        save_regressor(regressor, out, dict(metrics, config_hash=experiment.config_hash(), seed=experiment.seed))
        _register("regressor", out, experiment, file_digest(out), metrics)
        print_info(f"Validation beta MAE {metrics['beta_mae']:.4f}, coefficient MAE {metrics['coeff_mae']:.4f}")
        print_success(f"Regressor checkpoint written to {out}")


@enc_app.command("encode")
def enc_encode(image: Path = typer.Option(..., "--image", help="Input PNG"),
               ckpt: Path = typer.Option(..., "--ckpt", help="Encoder checkpoint"),
               mode: str = typer.Option("oracle", "--mode", help="oracle or regressor"),
               regressor: Optional[Path] = typer.Option(None, "--regressor", help="Regressor checkpoint"),
               dataset: Optional[Path] = typer.Option(None, "--dataset", help="Dataset for oracle lookup"),
               gen_ckpt: Optional[Path] = typer.Option(None, "--gen-ckpt", help="Render the reconstruction"),
               out: Optional[Path] = typer.Option(None, "--out", help="Reconstruction PNG"),
               codes_out: Optional[Path] = typer.Option(None, "--codes-out", help="Codes as JSON"),
               config_path: Optional[Path] = ConfigOption):
    """Encode an image into style and view codes"""
    with handle_errors():
        experiment = _experiment(config_path)
        bundle = _bundle(experiment, ckpt, regressor, dataset)
        x = load_png(image)
        coeffs = bundle.extract(x, mode)
        style, view = bundle.encode_coeffs(x, coeffs)
        display_codes(style, view, coeffs.to_dict())
        if codes_out:
            write_json_atomic({"w_geo": style.w_geo.tolist(), "w_tex": style.w_tex.tolist(),
                               "d": view.d.tolist(), "coeffs": coeffs.to_dict()}, codes_out)
            print_success(f"Codes written to {codes_out}")
        if gen_ckpt and out:
            with torch.no_grad():
                reconstruction = render(load_generator(gen_ckpt), style, view)
            save_png(reconstruction, out)
            print_success(f"Reconstruction written to {out} (PSNR {psnr(x, reconstruction):.2f} dB)")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@train_app.command("encoder")
def train_encoder_command(
        corpus: Path = typer.Option(..., "--corpus", help="Generator corpus"),
        gen_ckpt: Path = typer.Option(..., "--gen-ckpt", help="Frozen generator checkpoint"),
        out: Path = typer.Option(..., "--out", help="Encoder checkpoint"),
        regressor: Optional[Path] = typer.Option(None, "--regressor", help="Regressor for corpus coefficients"),
        no_discriminator: bool = typer.Option(False, "--no-discriminator", help="Drop the latent discriminator"),
        real_data_only: bool = typer.Option(False, "--real-data-only", help="Reconstruction loss only"),
        morph_only: bool = typer.Option(False, "--morph-only", help="Disable the detail encoders"),
        real_data: Optional[Path] = typer.Option(None, "--real-data", help="Procedural dataset to mix in"),
        steps: Optional[int] = typer.Option(None, help="Override inversion.steps"),
        log_dir: Optional[Path] = typer.Option(None),
        config_path: Optional[Path] = ConfigOption):
    """Train the 3D-aware encoder against a frozen generator"""
    with handle_errors():
        experiment = _experiment(config_path)
        inv = experiment.inversion
        generator = load_generator(gen_ckpt)
        reg = load_regressor(regressor) if regressor else None

        real = real_lookup = None
        if real_data:
            handle = read_dataset(real_data)
            real = corpus_from_dataset(handle)
            real_lookup = make_oracle_lookup(handle)
            if inv.real_data_fraction <= 0:
                inv.real_data_fraction = 0.25
                print_info("Mixing real data at a fraction of 0.25 per batch")

        result = train_encoder(
            read_corpus(corpus), generator, experiment, reg, None, steps,
            use_discriminator=False if no_discriminator else None,
            real_data_only=True if real_data_only else None,
            morph_only=True if morph_only else None,
            real_data=real, real_lookup=real_lookup, out_dir=log_dir,
        )
        ratio = result.variance_ratios[-1] if result.variance_ratios else float("nan")
        save_encoder(result.encoder, out, {
            "config_hash": experiment.config_hash(), "seed": experiment.seed, "steps_run": result.steps_run,
            "generator_sha256": file_digest(gen_ckpt), "variance_ratio": ratio,
        })
        _register("encoder", out, experiment, file_digest(out), {"steps_run": result.steps_run})
        display_training_summary("Encoder training", result.steps_run, summarize_log(result.log),
                                 {"Encoded/prior variance ratio": f"{ratio:.3f}"})
        print_success(f"Encoder checkpoint written to {out}")


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------

@flow_app.command("train")
def flow_train(out: Path = typer.Option(..., "--out", help="Flow checkpoint"),
               dataset: Optional[Path] = typer.Option(None, "--dataset", help="Procedural dataset (oracle attributes)"),
               enc_ckpt: Optional[Path] = typer.Option(None, "--enc-ckpt", help="Encoder for dataset codes"),
               regressor: Optional[Path] = typer.Option(None, "--regressor"),
               corpus: Optional[Path] = typer.Option(None, "--corpus", help="Generator corpus (predicted attributes)"),
               predictor: Optional[Path] = typer.Option(None, "--predictor", help="Attribute predictor"),
               steps: Optional[int] = typer.Option(None, help="Override flow.train_steps"),
               log_dir: Optional[Path] = typer.Option(None),
               config_path: Optional[Path] = ConfigOption):
    """Train both flow branches on (code, attribute) pairs"""
    with handle_errors():
        experiment = _experiment(config_path)
        source = experiment.flow.attribute_source
        if dataset:
            if not enc_ckpt:
                raise ArgumentError("--dataset needs --enc-ckpt to encode the images")
            handle = read_dataset(dataset)
            bundle = _bundle(experiment, enc_ckpt, regressor, dataset)
            images = handle.images()
            mode = experiment.encoder.coefficient_mode
            inputs = corpus_inputs(images, mode, bundle.regressor, bundle.lookup, experiment.scene)
            codes, _ = encode_images(bundle.encoder, images, inputs)
        elif corpus:
            data = read_corpus(corpus)
            images = data.images
            codes = data.style()
        else:
            raise ArgumentError("Pass --dataset with --enc-ckpt, or --corpus with --predictor")

        if source == "oracle" and dataset:
            attributes = handle.attribute_tensor()
        else:
            if not predictor:
                raise ArgumentError("Attributes of generator samples need --predictor")
            attributes = predict_attributes(load_predictor(predictor), images)

        names = list(experiment.scene.attribute_names)
        flow, history = train_flows(codes, attributes, experiment, steps, names, log_dir)
        nll = mean_nll(flow, codes, attributes)
        save_flow(flow, out, {"config_hash": experiment.config_hash(), "seed": experiment.seed,
                              "attribute_source": source, "mean_nll": nll})
        _register("flow", out, experiment, file_digest(out), nll)
        summary = {f"nll_{s}": {"first": h[0], "last": h[-1]} for s, h in history.items() if h}
        display_training_summary("Flow training", len(history["geo"]), summary)
        print_success(f"Flow checkpoint written to {out}")


def _session(experiment: ExperimentConfig, gen_ckpt: Path, enc_ckpt: Path, flow_ckpt: Optional[Path],
             predictor: Optional[Path], regressor: Optional[Path], dataset: Optional[Path],
             mode: str) -> EditingSession:
    lookup = make_oracle_lookup(read_dataset(dataset)) if dataset else None
    return load_session(gen_ckpt, enc_ckpt, flow_ckpt, predictor, regressor, lookup, mode, experiment.scene)


@flow_app.command("edit")
def flow_edit(image: Path = typer.Option(..., "--image", help="Input PNG"),
              set_: List[str] = typer.Option([], "--set", help="attribute=value, repeatable"),
              gen_ckpt: Path = typer.Option(..., "--gen-ckpt"),
              enc_ckpt: Path = typer.Option(..., "--enc-ckpt"),
              flow_ckpt: Optional[Path] = typer.Option(None, "--flow-ckpt"),
              predictor: Optional[Path] = typer.Option(None, "--predictor"),
              regressor: Optional[Path] = typer.Option(None, "--regressor"),
              dataset: Optional[Path] = typer.Option(None, "--dataset", help="Dataset for oracle lookup"),
              mode: str = typer.Option("oracle", "--mode"),
              out: Path = typer.Option(..., "--out", help="Edited PNG"),
              config_path: Optional[Path] = ConfigOption):
    """Invert an image, edit attributes through the flow and re-render"""
    with handle_errors():
        experiment = _experiment(config_path)
        edits = parse_edits(set_)
        session = _session(experiment, gen_ckpt, enc_ckpt, flow_ckpt, predictor, regressor, dataset, mode)
        edited = session.edit_image(load_png(image), edits)
        save_png(edited, out)
        _register("edit", out, experiment, file_digest(out), {"edits": edits})
        print_success(f"Edited image written to {out}")


@flow_app.command("texture-transfer")
def flow_texture_transfer(geo: Path = typer.Option(..., "--geo", help="Geometry source PNG"),
                          tex: Path = typer.Option(..., "--tex", help="Texture source PNG"),
                          gen_ckpt: Path = typer.Option(..., "--gen-ckpt"),
                          enc_ckpt: Path = typer.Option(..., "--enc-ckpt"),
                          regressor: Optional[Path] = typer.Option(None, "--regressor"),
                          dataset: Optional[Path] = typer.Option(None, "--dataset"),
                          mode: str = typer.Option("oracle", "--mode"),
                          out: Path = typer.Option(..., "--out"),
                          config_path: Optional[Path] = ConfigOption):
    """Geometry of one image with the texture of another"""
    with handle_errors():
        experiment = _experiment(config_path)
        session = _session(experiment, gen_ckpt, enc_ckpt, None, None, regressor, dataset, mode)
        mixed = session.texture_transfer(load_png(geo), load_png(tex))
        save_png(mixed, out)
        _register("texture-transfer", out, experiment, file_digest(out))
        print_success(f"Texture transfer written to {out}")


# ---------------------------------------------------------------------------
# video
# ---------------------------------------------------------------------------

@video_app.command("make")
def video_make(out: Path = typer.Option(..., "--out", help="Video directory"),
               seed: int = typer.Option(0),
               frames: Optional[int] = typer.Option(None, help="Override video.frames"),
               resolution: Optional[int] = typer.Option(None),
               overwrite: bool = typer.Option(False, "--overwrite"),
               config_path: Optional[Path] = ConfigOption):
    """Render a procedural toy video of one identity"""
    with handle_errors():
        experiment = _experiment(config_path)
        vcfg = experiment.video
        sequence, specs = make_toy_video(seed, frames or vcfg.frames, vcfg.yaw_amplitude, vcfg.expression_drift,
                                         vcfg.light_drift, resolution, experiment.scene)
        attributes = [attribute_oracle(spec, experiment.scene) for spec in specs]
        write_dataset(specs, sequence.frames, attributes, out, overwrite=overwrite, metadata={
            "kind": "video", "seed": seed, "frames": len(sequence), "config_hash": experiment.config_hash(),
        })
        _register("video", out, experiment, file_digest(out / "index.json"), {"frames": len(sequence)})
        print_success(f"Wrote a {len(sequence)}-frame video to {out}")


@video_app.command("invert")
def video_invert(video: Path = typer.Option(..., "--video", help="Video directory"),
                 enc_ckpt: Path = typer.Option(..., "--enc-ckpt"),
                 out: Path = typer.Option(..., "--out", help="Code manifest (JSON)"),
                 regressor: Optional[Path] = typer.Option(None, "--regressor"),
                 predictor: Optional[Path] = typer.Option(None, "--predictor"),
                 no_share: bool = typer.Option(False, "--no-share", help="Keep per-frame beta and albedo"),
                 no_smooth: bool = typer.Option(False, "--no-smooth", help="Skip code smoothing"),
                 config_path: Optional[Path] = ConfigOption):
    """Encode every frame with shared coefficients and smooth the codes"""
    with handle_errors():
        experiment = _experiment(config_path)
        bundle = _bundle(experiment, enc_ckpt, regressor, video)
        frames = read_dataset(video).images()
        codes = invert_sequence(bundle, frames, experiment, load_predictor(predictor) if predictor else None,
                                share_coefficients=not no_share, smoothing=not no_smooth)
        codes.metadata.update({"video": str(video), "config_hash": experiment.config_hash(),
                               "encoder_sha256": file_digest(enc_ckpt)})
        write_sequence_codes(codes, out)
        _register("video-codes", out, experiment, file_digest(out), {"frames": len(codes)})
        print_success(f"Encoded {len(codes)} frames; manifest written to {out}")


@video_app.command("finetune")
def video_finetune(video: Path = typer.Option(..., "--video"),
                   codes: Path = typer.Option(..., "--codes", help="Code manifest"),
                   gen_ckpt: Path = typer.Option(..., "--gen-ckpt"),
                   out: Path = typer.Option(..., "--out", help="Tuned generator checkpoint"),
                   steps: Optional[int] = typer.Option(None, help="Override video.finetune_steps"),
                   log_dir: Optional[Path] = typer.Option(None),
                   config_path: Optional[Path] = ConfigOption):
    """Fine-tune a per-video generator around the fixed code sequence"""
    with handle_errors():
        experiment = _experiment(config_path)
        sequence = read_sequence_codes(codes)
        frames = read_dataset(video).images()
        result = finetune_generator(load_generator(gen_ckpt), frames, sequence.style, sequence.view,
                                    experiment.video, steps, experiment.inversion.perceptual_seed,
                                    experiment.seed, log_dir)
        save_generator(result.generator, out, {
            "config_hash": experiment.config_hash(), "seed": experiment.seed, "steps_run": result.steps_run,
            "codes_sha256": result.codes_digest, "base_generator_sha256": file_digest(gen_ckpt),
            "psnr_before": float(np.mean(result.psnr_before)), "psnr_after": float(np.mean(result.psnr_after)),
        })
        _register("generator", out, experiment, file_digest(out), {"video": str(video)})
        print_info(f"Mean frame PSNR {np.mean(result.psnr_before):.2f} -> {np.mean(result.psnr_after):.2f} dB "
                   f"({result.psnr_gain:+.2f})")
        print_success(f"Tuned generator written to {out}")


@video_app.command("edit")
def video_edit(codes: Path = typer.Option(..., "--codes", help="Code manifest"),
               gen_ckpt: Path = typer.Option(..., "--gen-ckpt", help="Tuned generator"),
               flow_ckpt: Optional[Path] = typer.Option(None, "--flow-ckpt"),
               set_: List[str] = typer.Option([], "--set", help="attribute=value, repeatable"),
               out: Path = typer.Option(..., "--out", help="Edited video directory"),
               overwrite: bool = typer.Option(False, "--overwrite"),
               config_path: Optional[Path] = ConfigOption):
    """Edit every frame with the same targets and render the sequence"""
    with handle_errors():
        experiment = _experiment(config_path)
        edits = parse_edits(set_)
        sequence = read_sequence_codes(codes)
        flow = load_flow(flow_ckpt) if flow_ckpt else None
        frames = edit_sequence(load_generator(gen_ckpt), flow, sequence.style, sequence.view,
                               sequence.attributes, edits, sequence.attribute_names)
        records = [{"frame": i, "identity_id": sequence.identity_id} for i in range(frames.shape[0])]
        write_records(out, records, frames, overwrite=overwrite, metadata={
            "kind": "video-edit", "edits": edits, "config_hash": experiment.config_hash(),
        })
        _register("video-edit", out, experiment, file_digest(out / "index.json"), {"edits": edits})
        print_success(f"Wrote {frames.shape[0]} edited frames to {out}")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@eval_app.command("quality")
def eval_quality(dataset: Path = typer.Option(..., "--dataset", help="Dataset or corpus of target images"),
                 gen_ckpt: Path = typer.Option(..., "--gen-ckpt"),
                 enc_ckpt: Path = typer.Option(..., "--enc-ckpt"),
                 regressor: Optional[Path] = typer.Option(None, "--regressor"),
                 mode: Optional[str] = typer.Option(None, "--mode", help="Defaults to encoder.coefficient_mode"),
                 limit: Optional[int] = typer.Option(None, help="Evaluate the first N images"),
                 out: Optional[Path] = typer.Option(None, "--out", help="Report JSON"),
                 config_path: Optional[Path] = ConfigOption):
    """PSNR and SSIM of inversions, plus the generator FID proxy"""
    with handle_errors():
        experiment = _experiment(config_path)
        ev = experiment.eval
        mode = mode or experiment.encoder.coefficient_mode
        if read_index(dataset).get("kind") == "corpus":
            if mode == "oracle":
                raise ArgumentError("Corpus images are generator renders; evaluate them with --mode regressor")
            images = read_corpus(dataset).images
            lookup = None
        else:
            handle = read_dataset(dataset)
            images = handle.images()
            lookup = make_oracle_lookup(handle) if mode == "oracle" else None
        images = images[:limit] if limit else images
        encoder = load_encoder(enc_ckpt)
        generator = load_generator(gen_ckpt)
        reg = load_regressor(regressor) if regressor else None
        inputs = corpus_inputs(images, mode, reg, lookup, experiment.scene)
        style, view = encode_images(encoder, images, inputs)
        reconstructions = render_batch(generator, style, view)
        per_sample = {
            "psnr": psnr(images, reconstructions, ev.psnr_cap).tolist(),
            "ssim": ssim(images, reconstructions, ev.ssim_window, ev.ssim_sigma).tolist(),
        }
        extra = {"fid_proxy": fid_proxy(images, reconstructions) if images.shape[0] > 1 else None,
                 "mode": mode, "count": images.shape[0]}
        report = build_report(per_sample, experiment.config_hash(),
                              _hashes(generator=gen_ckpt, encoder=enc_ckpt, regressor=regressor),
                              experiment.seed, extra)
        _write_report(report, out, "quality", experiment)


@eval_app.command("identity")
def eval_identity(dataset: Path = typer.Option(..., "--dataset"),
                  gen_ckpt: Path = typer.Option(..., "--gen-ckpt"),
                  enc_ckpt: Path = typer.Option(..., "--enc-ckpt"),
                  regressor: Path = typer.Option(..., "--regressor", help="Trained regressor (identity proxy)"),
                  flow_ckpt: Optional[Path] = typer.Option(None, "--flow-ckpt"),
                  predictor: Optional[Path] = typer.Option(None, "--predictor"),
                  set_: List[str] = typer.Option([], "--set", help="attribute=value, repeatable"),
                  mode: str = typer.Option("oracle", "--mode"),
                  limit: int = typer.Option(20, help="Evaluate the first N images"),
                  out: Optional[Path] = typer.Option(None, "--out"),
                  config_path: Optional[Path] = ConfigOption):
    """Identity cosine of inversions and edits against their originals"""
    with handle_errors():
        experiment = _experiment(config_path)
        edits = parse_edits(set_)
        session = _session(experiment, gen_ckpt, enc_ckpt, flow_ckpt, predictor, regressor, dataset, mode)
        reg = session.bundle.regressor
        handle = read_dataset(dataset)
        per_sample = {"identity_inverted": []}
        if edits:
            per_sample["identity_edited"] = []
        for index in range(min(limit, len(handle))):
            x = handle.image(index)
            inversion = session.invert(x)
            inverted = session.render(inversion.style, inversion.view)
            per_sample["identity_inverted"].append(identity_score(reg, x, inverted))
            if edits:
                edited = session.render(session.edit_codes(inversion, edits), inversion.view)
                per_sample["identity_edited"].append(identity_score(reg, x, edited))
        report = build_report(per_sample, experiment.config_hash(),
                              _hashes(generator=gen_ckpt, encoder=enc_ckpt, regressor=regressor, flow=flow_ckpt),
                              experiment.seed, {"edits": edits, "threshold": experiment.eval.identity_threshold})
        _write_report(report, out, "identity", experiment)


@eval_app.command("video")
def eval_video(video: Path = typer.Option(..., "--video", help="Source video directory"),
               codes: Path = typer.Option(..., "--codes", help="Code manifest"),
               gen_ckpt: Path = typer.Option(..., "--gen-ckpt", help="Generator (tuned or pretrained)"),
               regressor: Path = typer.Option(..., "--regressor"),
               predictor: Path = typer.Option(..., "--predictor"),
               edited: Optional[Path] = typer.Option(None, "--edited", help="Edited video directory"),
               out: Optional[Path] = typer.Option(None, "--out"),
               config_path: Optional[Path] = ConfigOption):
    """Per-frame quality, identity track and temporal attribute inconsistency"""
    with handle_errors():
        experiment = _experiment(config_path)
        ev = experiment.eval
        frames = read_dataset(video).images()
        sequence = read_sequence_codes(codes)
        renders = render_batch(load_generator(gen_ckpt), sequence.style, sequence.view)
        reg = load_regressor(regressor)
        pred = load_predictor(predictor)
        per_sample = {
            "psnr": psnr(frames, renders, ev.psnr_cap).tolist(),
            "ssim": ssim(frames, renders, ev.ssim_window, ev.ssim_sigma).tolist(),
            "identity_vs_first": identity_score(reg, frames[0:1].expand_as(renders), renders).tolist(),
        }
        extra = {"attribute_inconsistency_inverted": attribute_inconsistency(renders, pred)}
        if edited:
            extra["attribute_inconsistency_edited"] = attribute_inconsistency(_frames(edited), pred)
        report = build_report(per_sample, experiment.config_hash(),
                              _hashes(generator=gen_ckpt, regressor=regressor, predictor=predictor),
                              experiment.seed, extra)
        _write_report(report, out, "video", experiment)
        for key, value in extra.items():
            print_info(f"{key}: {value:.4f}")


@eval_app.command("train-predictor")
def eval_train_predictor(dataset: Path = typer.Option(..., "--dataset"),
                         out: Path = typer.Option(..., "--out", help="Predictor checkpoint"),
                         steps: Optional[int] = typer.Option(None, help="Override eval.predictor_steps"),
                         log_dir: Optional[Path] = typer.Option(None),
                         config_path: Optional[Path] = ConfigOption):
    """Train the attribute predictor on oracle labels"""
    with handle_errors():
        experiment = _experiment(config_path)
        predictor, metrics = train_attribute_predictor(read_dataset(dataset), experiment, steps, log_dir)
        save_predictor(predictor, out, dict(metrics, config_hash=experiment.config_hash(), seed=experiment.seed))
        _register("predictor", out, experiment, file_digest(out), metrics)
        print_info(f"Train MAE {metrics['train_mae']:.4f}, validation MAE {metrics['val_mae']:.4f}")
        print_success(f"Predictor checkpoint written to {out}")


@eval_app.command("grid")
def eval_grid(kind: str = typer.Option(..., "--kind", help=" | ".join(GRID_KINDS)),
              out: Path = typer.Option(..., "--out", help="Grid PNG"),
              image: List[Path] = typer.Option([], "--image", help="Input PNG, repeatable"),
              tex_image: List[Path] = typer.Option([], "--tex-image", help="Texture sources for texture-transfer"),
              video: List[Path] = typer.Option([], "--video", help="Video directories for video-strip"),
              set_: List[str] = typer.Option([], "--set", help="attribute=value; one edit row per flag"),
              stride: int = typer.Option(1, help="Frame stride for video-strip"),
              gen_ckpt: Optional[Path] = typer.Option(None, "--gen-ckpt"),
              enc_ckpt: Optional[Path] = typer.Option(None, "--enc-ckpt"),
              flow_ckpt: Optional[Path] = typer.Option(None, "--flow-ckpt"),
              predictor: Optional[Path] = typer.Option(None, "--predictor"),
              regressor: Optional[Path] = typer.Option(None, "--regressor"),
              dataset: Optional[Path] = typer.Option(None, "--dataset"),
              mode: str = typer.Option("oracle", "--mode"),
              config_path: Optional[Path] = ConfigOption):
    """Emit a figure grid"""
    with handle_errors():
        experiment = _experiment(config_path)
        ev = experiment.eval
        if kind == "video-strip":
            if not video:
                raise ArgumentError("video-strip needs at least one --video")
            grid = build_grid(kind, sequences={p.name: _frames(p) for p in video}, stride=stride)
        else:
            if not (gen_ckpt and enc_ckpt):
                raise ArgumentError(f"A {kind} grid needs --gen-ckpt and --enc-ckpt")
            if not image:
                raise ArgumentError(f"A {kind} grid needs at least one --image")
            session = _session(experiment, gen_ckpt, enc_ckpt, flow_ckpt, predictor, regressor, dataset, mode)
            images = torch.stack([load_png(p) for p in image])
            if kind == "multiview":
                grid = build_grid(kind, session=session, image=images[0], yaws=ev.grid_yaws,
                                  edits=[parse_edits([s]) for s in set_])
            elif kind == "attribute-sweep":
                names = list(parse_edits(set_)) if set_ else list(experiment.scene.attribute_names)
                grid = build_grid(kind, session=session, image=images[0], attributes=names,
                                  values=ev.sweep_values)
            elif kind == "texture-transfer":
                tex = torch.stack([load_png(p) for p in tex_image]) if tex_image else images
                grid = build_grid(kind, session=session, geo_sources=images, tex_sources=tex)
            else:
                grid = build_grid(kind)
        path = emit_grid(grid, out, {"config_hash": experiment.config_hash(), "code_version": __version__})
        _register("grid", path, experiment, file_digest(path), {"kind": kind})
        print_success(f"Grid written to {path}")


@eval_app.command("artifacts")
def eval_artifacts(kind: Optional[str] = typer.Option(None, "--kind", help="Only this artifact kind")):
    """List registered artifacts and metric reports"""
    with handle_errors():
        try:
            db = Database(config.DB_PATH)
            display_artifacts(db.get_artifacts(kind))
            display_reports(db.get_reports())
            db.close()
        except sqlite3.Error as e:
            print_error(f"Artifact registry unavailable: {str(e)}")
            raise typer.Exit(code=3)


if __name__ == "__main__":
    app()
