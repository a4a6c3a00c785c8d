export * from "./isa";
export * from "./abi";
export * from "./crc32";
export * from "./container";
export * from "./asm";
export * from "./disasm";
export * from "./dsl";
export * from "./interpret";
export * from "./compile";
