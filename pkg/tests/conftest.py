from hypothesis import settings

# jit warm-up can blow the per-example deadline on the first draw; wall-clock
# budgets are enforced by the suite itself where they matter
settings.register_profile("pkg", deadline=None)
settings.load_profile("pkg")
