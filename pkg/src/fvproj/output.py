"""File emission: VTK legacy snapshots, diagnostics and study CSV, and the
report figures. Every file embeds the config hash and mesh hash."""

import datetime
import os

import numpy as np

from .scheme import StabilityRecord

__all__ = ["write_vtk", "DiagnosticsSink", "RunSinks", "write_study_csv",
           "plot_monitors", "plot_convergence"]


def _p0_pressure(p, mesh):
    """Cell averages of an edge-midpoint pressure (exact for affine pieces)."""
    return p.values[mesh.tri_edges].mean(axis=1)


def write_vtk(fileobj, mesh, u, p, time, config_digest, timestamp=True):
    """Legacy-format unstructured-grid snapshot with cell data.

    The title line carries the provenance hashes; the optional wall-clock
    comment is the only part allowed to differ between identical runs.
    """
    stamp = ""
    if timestamp:
        stamp = " written=%s" % datetime.datetime.now().isoformat(timespec="seconds")
    fileobj.write("# vtk DataFile Version 3.0\n")
    fileobj.write("config=%s mesh=%s t=%.17g%s\n"
                  % (config_digest, mesh.digest, time, stamp))
    fileobj.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    fileobj.write("POINTS %d double\n" % mesh.n_vertices)
    for x, y in mesh.vertices:
        fileobj.write("%.17g %.17g 0\n" % (x, y))
    T = mesh.n_triangles
    fileobj.write("CELLS %d %d\n" % (T, 4 * T))
    for i, j, k in mesh.triangles:
        fileobj.write("3 %d %d %d\n" % (i, j, k))
    fileobj.write("CELL_TYPES %d\n" % T)
    fileobj.write("5\n" * T)
    fileobj.write("CELL_DATA %d\n" % T)
    fileobj.write("VECTORS velocity double\n")
    for vx, vy in u.values:
        fileobj.write("%.17g %.17g 0\n" % (vx, vy))
    fileobj.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
    for val in _p0_pressure(p, mesh):
        fileobj.write("%.17g\n" % val)
    fileobj.write("FIELD FieldData 1\nTIME 1 1 double\n%.17g\n" % time)


class DiagnosticsSink:
    """Streams one CSV row per completed step; snapshot events are ignored."""

    def __init__(self, fileobj, mesh, config_digest):
        self.fileobj = fileobj
        fileobj.write("# config=%s mesh=%s\n" % (config_digest, mesh.digest))
        fileobj.write(",".join(StabilityRecord.FIELDS) + "\n")

    def snapshot(self, state, mesh):
        pass

    def record(self, rec):
        vals = rec.as_row()
        self.fileobj.write("%d,%.17g," % (vals[0], vals[1])
                           + ",".join("%.17g" % v for v in vals[2:9])
                           + ",%d,%d\n" % (vals[9], vals[10]))

    def flush(self):
        self.fileobj.flush()


class RunSinks:
    """Sink bundle for a simulation: diagnostics CSV, periodic VTK snapshots
    and an in-memory record list for the report figure."""

    def __init__(self, outdir, mesh, config_digest, every=10, timestamp=True):
        self.outdir = outdir
        self.mesh = mesh
        self.digest = config_digest
        self.every = every
        self.timestamp = timestamp
        self.records = []
        os.makedirs(outdir, exist_ok=True)
        self._diag_file = open(os.path.join(outdir, "diagnostics.csv"), "w")
        self._diag = DiagnosticsSink(self._diag_file, mesh, config_digest)
        self._last_state = None

    def snapshot(self, state, mesh):
        self._last_state = state
        if state.step % self.every == 0 or state.step == 1:
            self._write_vtk(state)

    def _write_vtk(self, state):
        path = os.path.join(self.outdir, "snapshot_%06d.vtk" % state.step)
        with open(path, "w") as f:
            write_vtk(f, self.mesh, state.u_curr, state.p_curr, state.time,
                      self.digest, timestamp=self.timestamp)

    def record(self, rec):
        self.records.append(rec)
        self._diag.record(rec)

    def flush(self):
        # Always persist the final state, whatever the cadence.
        if self._last_state is not None and self._last_state.step % self.every:
            self._write_vtk(self._last_state)
        self._diag.flush()
        self._diag_file.close()


def write_study_csv(study, fileobj, config_digest, mesh_digests=()):
    """Convergence-study table; EOC is blank on the coarsest level."""
    fileobj.write("# config=%s meshes=%s\n"
                  % (config_digest, ";".join(mesh_digests)))
    fileobj.write("level,h,k,err_l2l2_u,eoc\n")
    for row in study.levels:
        eoc = "" if row["eoc"] is None else "%.17g" % row["eoc"]
        fileobj.write("%d,%.17g,%.17g,%.17g,%s\n"
                      % (row["level"], row["h"], row["k"],
                         row["err_l2l2_u"], eoc))


def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_monitors(records, path):
    """Stability monitors over time, one panel per group of quantities."""
    plt = _matplotlib()
    t = [r.time for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = [
        (axes[0, 0], ["l2_u", "du_dt"], "velocity"),
        (axes[0, 1], ["cum_k_normh_ut2", "cum_k_l2_p2"], "cumulative"),
        (axes[1, 0], ["l2_grad_p"], "pressure gradient"),
        (axes[1, 1], ["div_u", "normal_jump"], "incompressibility"),
    ]
    for ax, names, title in panels:
        for name in names:
            ax.plot(t, [getattr(r, name) for r in records], label=name)
        ax.set_title(title)
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
    if all(r.div_u > 0 and r.normal_jump > 0 for r in records):
        axes[1, 1].set_yscale("log")
    for ax in axes[1]:
        ax.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_convergence(study, path):
    """Log-log velocity-error decay against mesh size, with an h reference."""
    plt = _matplotlib()
    hs = [row["h"] for row in study.levels]
    errs = [row["err_l2l2_u"] for row in study.levels]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(hs, errs, "o-", label="velocity error")
    ref = errs[0] * np.asarray(hs) / hs[0]
    ax.loglog(hs, ref, "k--", alpha=0.5, label="order 1 reference")
    ax.set_xlabel("h")
    ax.set_ylabel("space-time L2 error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
