# Intentionally bare: import submodules directly (conav.sim.scenario,
# conav.sim.episode, ...) so the dependency graph stays acyclic.
