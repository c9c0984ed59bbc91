// placeholder until the experiment runner lands
