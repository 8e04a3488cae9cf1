# %% [markdown]
# # Threshold sensitivity and paired comparisons
#
# Every policy sees the same traces for a given seed, so per-seed
# differences can be tested with a paired t-test.

# %%
from brownout_sim.cli import compare_summaries, comparison_table
from brownout_sim.experiment import dispatch, parse_spec, summarize

spec = parse_spec(
    {
        "policies": ["PCO", "BMDP"],
        "seeds": list(range(5)),
        "sim": {"horizon_intervals": 96},
        "datacenter": {"n_hosts": 20, "n_vms": 40},
        "sweep": {"axis": "threshold", "values": [0.8, 0.9]},
    }
)
summary = summarize(spec, dispatch(spec))

# %%
for entry in summary["results"]:
    s = entry["stats"]["energy_kwh"]
    print(f"{entry['policy']:5s} tp={entry['axis_value']:.2f} energy={s['mean']:.3f} [{s['ci_lo']:.3f}, {s['ci_hi']:.3f}]")

# %% [markdown]
# Paired tests between every pair of groups in the summary.

# %%
rows = compare_summaries([summary], ["sweep"], metric="energy_kwh")
print(comparison_table(rows, "energy_kwh"))
