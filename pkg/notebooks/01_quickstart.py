# %% [markdown]
# # Quickstart: one simulated day
#
# Build a small datacenter, replay a synthetic day of CPU traces and compare
# the four consolidation policies on energy and revenue discount.

# %%
from brownout_sim.experiment import dispatch, parse_spec, summarize

spec = parse_spec(
    {
        "policies": ["PCO", "UBP", "HUPRFCS", "BMDP"],
        "seeds": [0],
        "sim": {"horizon_intervals": 288, "lambda": 100},
        "datacenter": {"n_hosts": 20, "n_vms": 40},
    }
)
results = dispatch(spec)

# %%
for r in results:
    t = r.ledger.totals()
    print(f"{r.key.policy.value:8s} energy={t['energy_kwh']:8.3f} kWh  discount={t['discount_pct']:6.3f}%  migrations={t['migrations']}")

# %% [markdown]
# Brownout policies give up some revenue (the discount) for lower energy.
# The consolidation-only baselines never deactivate components.

# %%
summary = summarize(spec, results)
print(sorted(summary["results"][0]["runs"][0]))
