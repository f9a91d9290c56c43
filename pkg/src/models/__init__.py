# Core model package: microgrid spec, profiles, scenario configuration
