"""Matplotlib figures written next to the machine-readable outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curves(metrics, path):
    """Two-panel training summary: loss components and atmosphere trajectory."""
    iters = [m["iter"] for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("total", "rec", "cons", "cd", "tv"):
        ax1.plot(iters, [m[key] for m in metrics], label=key)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.set_title("loss components")

    ax2.plot(iters, [m["beta_mean"] for m in metrics], label="beta mean")
    ax2.plot(iters, [m["a_mean"] for m in metrics], label="A mean")
    ax2.set_xlabel("iteration")
    ax2.legend(fontsize=8)
    ax2.set_title("atmosphere estimates")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figure(report, path):
    """Per-view PSNR bars with the mean marked."""
    names = [v.name for v in report.per_view]
    values = [v.psnr for v in report.per_view]
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names)), 3.5))
    ax.bar(names, values, color="#4878cf")
    ax.axhline(report.psnr_mean, color="k", linestyle="--", linewidth=1,
               label=f"mean {report.psnr_mean:.2f} dB")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"held-out views ({report.mode})")
    ax.tick_params(axis="x", rotation=45, labelsize=8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(curves, path):
    """PSNR against haze concentration for ours vs the naive baseline."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(curves["beta"], curves["ours_psnr"], "o-", label="ours")
    ax.plot(curves["beta"], curves["naive_psnr"], "s--", label="naive")
    ax.set_xlabel("scattering coefficient")
    ax.set_ylabel("mean PSNR (dB)")
    ax.set_title("robustness to haze concentration")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
