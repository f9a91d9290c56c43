# Network emulation: traffic-class delay model, delay statistics and the delaying TCP proxy
