"""Batch command-line interface: ``lumen <command> [options]``.

Commands: toygen, simulate, train, aggregate, restore, eval, sweep.

Exit status: 0 success, 2 usage error, 3 data error (missing, empty or
malformed inputs), 4 numeric failure. Every command is deterministic under a
fixed ``--seed`` (falling back to ``$LUMEN_SEED``, then 0); random streams are
split by command name, file index and pixel position. Outputs are written
atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from functools import wraps
from pathlib import Path

import numpy as np

from . import pipeline
from .conditioning import ProjectionBufferEncoder
from .denoisers import MlpDenoiser
from .diffusion import DEFAULT_SAMPLER
from .errors import CapacityError, ContractError, DomainError, FormatError, NumericError
from .gallery import extract_with_codes, load_codec
from .image import UNIT
from .imageio import atomic_write_text, read_image, write_image, write_json
from .metrics import DefaultEmbedder, FileEmbedder, evaluate, id_score, psnr
from .rng import SeededRng
from .schedules import linear_schedule, schedule_from_config
from .sensor import IspParams, SensorProfile, dslr_test_profile, simulate_capture
from .toy import make_toy_set, read_image_dir, read_toy_dir, write_toy_set

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SWEEP_HEADER = ["ppp", "N", "psnr", "fid", "kid", "id_score"]
IMAGE_SUFFIXES = (".pfm", ".ppm", ".pgm")


class UsageError(Exception):
    pass


def _exit_codes(fn):
    @wraps(fn)
    def run(*args, **kwargs) -> int:
        try:
            fn(*args, **kwargs)
        except UsageError as e:
            print(f"lumen: usage error: {e}", file=sys.stderr)
            return EXIT_USAGE
        except NumericError as e:
            print(f"lumen: numeric error: {e}", file=sys.stderr)
            return EXIT_NUMERIC
        except (DomainError, FormatError, ContractError, CapacityError, OSError,
                json.JSONDecodeError, KeyError) as e:
            print(f"lumen: data error: {e}", file=sys.stderr)
            return EXIT_DATA
        return EXIT_OK
    return run


def resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("LUMEN_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"LUMEN_SEED must be an integer, got {env!r}") from None


def load_config(value, default=None) -> dict:
    """A JSON config given as a file path or as an inline JSON object."""
    if value is None:
        return dict(default or {})
    text = value if value.lstrip().startswith("{") else Path(value).read_text()
    cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise FormatError(f"config {value!r} is not a JSON object")
    return cfg


def load_profile(value, ppp=None) -> SensorProfile:
    prof = dslr_test_profile() if value is None else SensorProfile.from_dict(load_config(value))
    return prof if ppp is None else prof.with_ppp(float(ppp))


def parse_list(text, kind=float) -> list:
    try:
        return [kind(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _image_files(d) -> list:
    d = Path(d)
    if not d.is_dir():
        raise DomainError(f"input directory {d} does not exist")
    files = sorted(p for p in d.iterdir() if p.suffix in IMAGE_SUFFIXES)
    if not files:
        raise DomainError(f"no images in {d}")
    return files


def _map(fn, items, jobs: int):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# -- commands ---------------------------------------------------------------

@_exit_codes
def cmd_toygen(n_ids: int = 8, per_id: int = 6, size: int = 16, seed: int | None = None, out=".",
               n_probe: int = 4, n_train: int = 32) -> None:
    if n_ids < 1 or per_id < 1 or size < 8 or size % 8:
        raise UsageError("need n_ids >= 1, per_id >= 1 and a size that is a multiple of 8")
    seed = resolve_seed(seed)
    ts = make_toy_set(n_ids, per_id, size, seed, n_probe, n_train)
    codecs = pipeline.default_codecs((size, size, 3), seed)
    cfg = {"n_ids": n_ids, "per_id": per_id, "size": size, "seed": seed, "n_probe": n_probe,
           "n_train": n_train}
    write_toy_set(ts, out, size, cfg, codecs)


@_exit_codes
def cmd_simulate(in_dir, profile=None, seed: int | None = None, out_dir=".", ppp=None,
                 isp=None, jobs: int = 1) -> None:
    seed = resolve_seed(seed)
    prof = load_profile(profile, ppp)
    isp_p = IspParams.from_dict(load_config(isp)) if isp else IspParams()
    files = _image_files(in_dir)
    out = Path(out_dir)

    def one(item):
        i, path = item
        img = read_image(path)
        if img.range != UNIT or img.channels != 3:
            raise DomainError(f"{path.name}: simulate needs 3-channel unit-linear images")
        noisy, raw = simulate_capture(img, prof, isp_p, SeededRng(seed, "simulate", i))
        write_image(noisy, out / f"{path.stem}_noisy.pfm")
        write_image(raw, out / f"{path.stem}_raw.pfm")
        return {"input": path.name, "noisy": f"{path.stem}_noisy.pfm", "raw": f"{path.stem}_raw.pfm",
                "seed": seed, "stream": ["simulate", i]}

    entries = _map(one, list(enumerate(files)), jobs)
    write_json(out / "manifest.json", {"profile": prof.to_dict(), "isp": isp_p.to_dict(),
                                       "seed": seed, "files": entries})


def _codecs(data_dir, albedo=None, normal=None):
    root = Path(data_dir)
    a = Path(albedo) if albedo else root / "codecs" / "albedo.dpgd"
    n = Path(normal) if normal else root / "codecs" / "normal.dpgd"
    return load_codec(a), load_codec(n)


def _encoder_from(manifest: dict) -> ProjectionBufferEncoder:
    e = manifest.get("encoder", {})
    return ProjectionBufferEncoder(e.get("latent_dim", 64), seed=e.get("seed", 0))


@_exit_codes
def cmd_train(data_dir, schedule=None, iters: int = 500, batch: int = 32, seed: int | None = None,
              checkpoint_out="model.dpgd", no_buffers: bool = False, resume: bool = False,
              lr: float = pipeline.TOY_LR, copies: int = 2, latent_dim: int = 64,
              film: str = "scale_shift", log=None) -> None:
    seed = resolve_seed(seed)
    if iters < 0 or batch < 1:
        raise UsageError("iters must be >= 0 and batch >= 1")
    toy = read_toy_dir(data_dir)
    if not any(toy.train):
        raise DomainError(f"no training renders under {data_dir}")
    sched = schedule_from_config(load_config(schedule, {"kind": "linear", "T": 1000}))
    ckpt = Path(checkpoint_out)
    loss_csv = ckpt.with_name(ckpt.stem + "_loss.csv")
    shape = toy.train[0][0].shape
    state, prior = None, []
    if resume and ckpt.exists():
        net, manifest, state = MlpDenoiser.load(ckpt)
        use_buffers = net.latent_dim > 0
        enc = _encoder_from(manifest)
        if loss_csv.exists():
            prior = [float(r["loss"]) for r in csv.DictReader(io.StringIO(loss_csv.read_text()))]
        seed = manifest["train"]["seed"]
        sched = schedule_from_config(manifest["schedule"])
        copies = manifest["train"]["copies"]
        lr = manifest["train"]["lr"]
    else:
        use_buffers = not no_buffers
        enc = ProjectionBufferEncoder(latent_dim, seed=0)
        net = pipeline.new_model(shape, latent_dim if use_buffers else 0, seed=seed, film=film)
    latents = None
    if use_buffers:
        codecs = _codecs(data_dir)
        latents = [pipeline.identity_latent(g, codecs, enc) for g in toy.gallery]
    data = pipeline.build_training_set(toy.train, latents, seed, copies)
    net, state, losses = pipeline.train_model(data, net, sched, iters, batch, seed, state, lr, log)
    extra = {"schedule": sched.to_config(), "shape": list(shape),
             "encoder": {"latent_dim": enc.latent_dim, "seed": enc.seed},
             "train": {"seed": seed, "batch": batch, "lr": lr, "copies": copies,
                       "use_buffers": use_buffers, "iters_total": state.step}}
    net.save(ckpt, extra, state)
    rows = ["step,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate([*prior, *map(float, losses)])]
    atomic_write_text(loss_csv, "\n".join(rows) + "\n")


@_exit_codes
def cmd_aggregate(gallery, albedo_codec, normal_codec, out, jobs: int = 1) -> None:
    imgs = [read_image(p) for p in _image_files(gallery)]
    a, n = load_codec(albedo_codec), load_codec(normal_codec)
    ex = extract_with_codes(imgs, a, n)
    out = Path(out)
    write_image(ex.buffers.albedo, out / "albedo.pfm")
    write_image(ex.buffers.normal, out / "normal.pfm")
    write_json(out / "codes.json", {
        "n_images": len(imgs),
        "albedo": {"global": ex.albedo_global.tolist(), "weights": ex.albedo_weights.tolist()},
        "normal": {"global": ex.normal_global.tolist(), "weights": ex.normal_weights.tolist()},
    })


def _load_buffers(buffers_dir):
    from .gallery import PhysicalBuffers

    d = Path(buffers_dir)
    return PhysicalBuffers(read_image(d / "albedo.pfm"), read_image(d / "normal.pfm"))


@_exit_codes
def cmd_restore(input, checkpoint, buffers=None, sampler=None, out="restored", seed: int | None = None,
                no_buffers: bool = False, gallery=None, albedo_codec=None, normal_codec=None) -> None:
    net, manifest, _ = MlpDenoiser.load(checkpoint)
    sched = schedule_from_config(manifest["schedule"])
    samp = {**DEFAULT_SAMPLER, **load_config(sampler)}
    if seed is None and not os.environ.get("LUMEN_SEED") and sampler is not None:
        seed = samp["seed"]  # the sampler config's seed applies when no flag or env seed is set
    seed = resolve_seed(seed)
    src = Path(input)
    files = _image_files(src) if src.is_dir() else [src]
    ys = [read_image(p) for p in files]
    if src.is_dir():
        # skip raw DN mosaics written alongside simulated captures
        keep = [k for k, y in enumerate(ys) if y.range == UNIT and y.channels == 3]
        files, ys = [files[k] for k in keep], [ys[k] for k in keep]
    if not ys or any(y.shape != ys[0].shape or y.range != UNIT for y in ys):
        raise DomainError("restore needs unit-linear images of one common shape")
    latent = None
    if not no_buffers and net.latent_dim:
        enc = _encoder_from(manifest)
        if buffers is not None:
            bufs = _load_buffers(buffers)
        elif gallery is not None:
            if not (albedo_codec and normal_codec):
                raise UsageError("--gallery needs --albedo-codec and --normal-codec")
            imgs = [read_image(p) for p in _image_files(gallery)]
            bufs = extract_with_codes(imgs, load_codec(albedo_codec), load_codec(normal_codec)).buffers
        else:
            raise UsageError("this checkpoint uses buffers: pass --buffers, --gallery or --no-buffers")
        latent = enc.encode(bufs)
    elif buffers is not None and not net.latent_dim and not no_buffers:
        raise UsageError("checkpoint was trained without buffers; drop --buffers")
    shape = ys[0].shape
    outs = pipeline.restore(net, ys, None if latent is None else [latent] * len(ys), sched, samp,
                            seed, shape)
    if src.is_dir():
        for p, img in zip(files, outs):
            write_image(img, Path(out) / f"{p.stem}.pfm")
    else:
        write_image(outs[0], out)


def _embedder(embeddings):
    return FileEmbedder(embeddings) if embeddings else DefaultEmbedder()


@_exit_codes
def cmd_eval(restored, reference=None, gallery=None, out="report.json", embeddings=None,
             seed: int | None = None, jobs: int = 1) -> None:
    seed = resolve_seed(seed)
    rest = [read_image(p) for p in _image_files(restored)]
    ref = [read_image(p) for p in _image_files(reference)] if reference else None
    gal = [read_image(p) for p in _image_files(gallery)] if gallery else None
    rep = evaluate(rest, ref, [gal] * len(rest) if gal else None, _embedder(embeddings), seed=seed)
    rep.config.update({"restored": Path(restored).name, "reference": reference and Path(reference).name,
                       "gallery": gallery and Path(gallery).name})
    atomic_write_text(out, rep.to_json())


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.6f}"


def sweep_rows(toy_dir, checkpoint, ppps, sizes, profile=None, sampler=None, seed: int = 0,
               no_buffers: bool = False) -> list[dict]:
    """simulate -> restore -> evaluate for every (ppp, gallery size) pair."""
    toy = read_toy_dir(toy_dir)
    if not any(toy.probe):
        raise DomainError(f"no probe images under {toy_dir}")
    net, manifest, _ = MlpDenoiser.load(checkpoint)
    sched = schedule_from_config(manifest["schedule"])
    samp = load_config(sampler, DEFAULT_SAMPLER)
    use_buffers = net.latent_dim > 0 and not no_buffers
    if use_buffers:
        codecs, enc = _codecs(toy_dir), _encoder_from(manifest)
    probes = [p for ps in toy.probe for p in ps]
    owner = [i for i, ps in enumerate(toy.probe) for _ in ps]
    emb = DefaultEmbedder()
    rows = []
    for ppp in ppps:
        prof = load_profile(profile, ppp)
        ys = [pipeline.degrade_image(p, prof, SeededRng(seed, "sweep", f"{ppp:g}", k))
              for k, p in enumerate(probes)]
        deg_psnr = float(np.mean([psnr(y, p) for y, p in zip(ys, probes)]))
        for n in sizes:
            if use_buffers:
                if any(len(g) < n for g in toy.gallery):
                    raise DomainError(f"gallery size {n} exceeds the available gallery images")
                lat = [pipeline.identity_latent(g[:n], codecs, enc) for g in toy.gallery]
                latents = [lat[i] for i in owner]
            else:
                latents = None
            outs = pipeline.restore(net, ys, latents, sched, samp, seed, probes[0].shape)
            rep = evaluate(outs, probes, [toy.gallery[i] for i in owner], emb, seed=seed)
            own = np.array([id_score(o, toy.gallery[i], emb) for o, i in zip(outs, owner)])
            other = np.array([np.mean([id_score(o, g, emb) for j, g in enumerate(toy.gallery) if j != i])
                              if len(toy.gallery) > 1 else np.nan for o, i in zip(outs, owner)])
            rows.append({"ppp": ppp, "N": n, "psnr": rep.psnr, "fid": rep.fid, "kid": rep.kid,
                         "id_score": rep.id_score, "degraded_psnr": deg_psnr,
                         "id_score_se": float(own.std(ddof=1) / math.sqrt(len(own))) if len(own) > 1 else math.nan,
                         "own_beats_other": float(np.mean(own > other)), "n_probes": len(probes),
                         "id_scores": own.tolist(), "other_scores": other.tolist()})
    return rows


@_exit_codes
def cmd_sweep(probe_set, ppps, checkpoint, out_dir, sizes=(1, 2, 3, 4, 5, 6), profile=None, sampler=None,
              seed: int | None = None, no_buffers: bool = False) -> None:
    seed = resolve_seed(seed)
    rows = sweep_rows(probe_set, checkpoint, ppps, sizes, profile, sampler, seed, no_buffers)
    lines = [",".join(SWEEP_HEADER)]
    for r in rows:
        lines.append(",".join([f"{r['ppp']:g}", str(r["N"])] + [_fmt(r[k]) for k in SWEEP_HEADER[2:]]))
    out = Path(out_dir)
    atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    write_json(out / "sweep.json", {"seed": seed, "rows": rows})


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lumen", description="Low-light face restoration toolkit (desk scale).")
    sub = p.add_subparsers(dest="command", required=True)

    def seed_flag(sp):
        sp.add_argument("--seed", type=int, default=None, help="root seed (default: $LUMEN_SEED or 0)")

    t = sub.add_parser("toygen", help="render a toy identity dataset")
    t.add_argument("--n-ids", type=int, default=8)
    t.add_argument("--per-id", type=int, default=6, help="gallery images per identity")
    t.add_argument("--size", type=int, default=16)
    t.add_argument("--n-probe", type=int, default=4)
    t.add_argument("--n-train", type=int, default=32)
    t.add_argument("--out", required=True)
    seed_flag(t)

    s = sub.add_parser("simulate", help="low-light capture simulation for a directory of images")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--profile", help="sensor profile JSON (default: the 12-bit evaluation sensor)")
    s.add_argument("--ppp", type=float, help="override the profile's photons per pixel")
    s.add_argument("--isp", help="ISP parameters JSON")
    s.add_argument("--jobs", type=int, default=1)
    seed_flag(s)

    tr = sub.add_parser("train", help="train the conditional noise predictor on a toy dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--schedule", help="schedule config JSON")
    tr.add_argument("--iters", type=int, default=500)
    tr.add_argument("--batch", type=int, default=32)
    tr.add_argument("--lr", type=float, default=pipeline.TOY_LR)
    tr.add_argument("--copies", type=int, default=2, help="noisy captures per clean render")
    tr.add_argument("--latent-dim", type=int, default=64)
    tr.add_argument("--film", choices=("scale_shift", "additive"), default="scale_shift")
    tr.add_argument("--no-buffers", action="store_true", help="train the buffer-free ablation model")
    tr.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    tr.add_argument("--out", required=True, help="checkpoint path")
    seed_flag(tr)

    a = sub.add_parser("aggregate", help="extract identity-consistent buffers from a gallery")
    a.add_argument("--gallery", required=True)
    a.add_argument("--albedo-codec", required=True)
    a.add_argument("--normal-codec", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--jobs", type=int, default=1)

    r = sub.add_parser("restore", help="restore degraded image(s)")
    r.add_argument("--input", required=True, help="image file or directory")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--buffers", help="directory with albedo.pfm / normal.pfm")
    r.add_argument("--gallery", help="gallery directory (buffers extracted on the fly)")
    r.add_argument("--albedo-codec")
    r.add_argument("--normal-codec")
    r.add_argument("--no-buffers", action="store_true")
    r.add_argument("--sampler", help='sampler config JSON, e.g. {"sampler":"ddim","steps":200,"eta":0}')
    r.add_argument("--out", required=True)
    seed_flag(r)

    e = sub.add_parser("eval", help="PSNR / FID / KID / ID-score report")
    e.add_argument("--restored", required=True)
    e.add_argument("--reference")
    e.add_argument("--gallery")
    e.add_argument("--embeddings", help="directory of precomputed .pfm embedding vectors")
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int, default=1)
    seed_flag(e)

    w = sub.add_parser("sweep", help="simulate -> restore -> eval over ppp levels and gallery sizes")
    w.add_argument("--probes", required=True, help="toy dataset directory")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--ppp", default="5,13,26,39", help="comma-separated photon levels")
    w.add_argument("--gallery-sizes", default="1,2,3,4,5,6")
    w.add_argument("--profile")
    w.add_argument("--sampler")
    w.add_argument("--no-buffers", action="store_true")
    w.add_argument("--out", required=True)
    seed_flag(w)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    c = args.command
    try:
        if c == "toygen":
            return cmd_toygen(args.n_ids, args.per_id, args.size, args.seed, args.out, args.n_probe, args.n_train)
        if c == "simulate":
            return cmd_simulate(args.in_dir, args.profile, args.seed, args.out, args.ppp, args.isp, args.jobs)
        if c == "train":
            return cmd_train(args.data, args.schedule, args.iters, args.batch, args.seed, args.out,
                             args.no_buffers, args.resume, args.lr, args.copies, args.latent_dim, args.film,
                             log=lambda m: print(m, file=sys.stderr))
        if c == "aggregate":
            return cmd_aggregate(args.gallery, args.albedo_codec, args.normal_codec, args.out, args.jobs)
        if c == "restore":
            return cmd_restore(args.input, args.checkpoint, args.buffers, args.sampler, args.out, args.seed,
                               args.no_buffers, args.gallery, args.albedo_codec, args.normal_codec)
        if c == "eval":
            return cmd_eval(args.restored, args.reference, args.gallery, args.out, args.embeddings,
                            args.seed, args.jobs)
        if c == "sweep":
            return cmd_sweep(args.probes, parse_list(args.ppp), args.checkpoint, args.out,
                             parse_list(args.gallery_sizes, int), args.profile, args.sampler, args.seed,
                             args.no_buffers)
    except UsageError as e:
        print(f"lumen: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
