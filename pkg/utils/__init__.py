# Utils package: configuration, errors, packed bit buffers
