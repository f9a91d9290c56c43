# Profile sources package
