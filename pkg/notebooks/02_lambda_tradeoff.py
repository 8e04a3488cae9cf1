# %% [markdown]
# # Energy versus discount across the weight lambda
#
# Larger lambda makes each unit of discount more expensive, so the
# controller deactivates fewer optional components.

# %%
from brownout_sim.experiment import dispatch, parse_spec, summarize

spec = parse_spec(
    {
        "policies": ["BMDP"],
        "seeds": [0, 1, 2],
        "sim": {"horizon_intervals": 96},
        "datacenter": {"n_hosts": 20, "n_vms": 40},
        "sweep": {"axis": "lambda", "values": [0, 10, 100, 1000, 4500]},
    }
)
summary = summarize(spec, dispatch(spec))

# %%
for entry in summary["results"]:
    e = entry["stats"]["energy_kwh"]
    d = entry["stats"]["discount_pct"]
    print(f"lambda={entry['axis_value']:7.1f} energy={e['mean']:8.3f} [{e['ci_lo']:.3f}, {e['ci_hi']:.3f}]  discount={d['mean']:.3f}%")

# %% [markdown]
# Plotting the two mean columns against each other gives the trade-off curve.

# %%
try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    xs = [e["stats"]["discount_pct"]["mean"] for e in summary["results"]]
    ys = [e["stats"]["energy_kwh"]["mean"] for e in summary["results"]]
    plt.plot(xs, ys, marker="o")
    plt.xlabel("discount (%)")
    plt.ylabel("energy (kWh)")
    plt.show()
